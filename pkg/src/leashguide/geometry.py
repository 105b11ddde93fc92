"""
Configuration, frames and leash geometry of the robot-leash-human system.

The generalized coordinates are ``q = (x, y, theta, phi, l)``: robot position,
robot heading in the world frame, bearing of the human in the robot body frame
and the human-robot distance. Functions accept a single configuration or a
stacked array of shape ``(..., 5)``; inputs ``u = (vbx, vby, omega)`` stack
the same way along the last axis.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import ZeroSpeed

EPS_SPEED = 1e-9

X, Y, THETA, PHI, L = range(5)


class Vec2(NamedTuple):
    x: float
    y: float


class Configuration(NamedTuple):
    x: float
    y: float
    theta: float
    phi: float
    l: float

    @property
    def position(self) -> Vec2:
        return Vec2(self.x, self.y)

    @classmethod
    def from_array(cls, a) -> "Configuration":
        return cls(*(float(v) for v in np.asarray(a, dtype=float).reshape(5)))


class ControlInput(NamedTuple):
    vbx: float
    vby: float
    omega: float

    @property
    def v_body(self) -> Vec2:
        return Vec2(self.vbx, self.vby)

    @classmethod
    def from_array(cls, a) -> "ControlInput":
        return cls(*(float(v) for v in np.asarray(a, dtype=float).reshape(3)))


class LeashParams(NamedTuple):
    """Leash length ``l0`` [m], slack tension threshold ``f_bar`` [N] and disc radii [m]."""

    l0: float = 1.3
    f_bar: float = 12.0
    robot_radius: float = 0.25
    human_radius: float = 0.25

    def validate(self) -> "LeashParams":
        if not self.l0 > 0:
            raise ValueError("l0 must be positive")
        if not self.f_bar >= 0:
            raise ValueError("f_bar must be nonnegative")
        if not (self.robot_radius > 0 and self.human_radius > 0):
            raise ValueError("radii must be positive")
        return self


def wrap_angle(a):
    """Map angles onto (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    # angles already in range pass through bit-exact
    w = np.where((a > -np.pi) & (a <= np.pi), a, np.pi - np.mod(np.pi - a, 2.0 * np.pi))
    return float(w) if w.ndim == 0 else w


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def leash_direction_world(q) -> np.ndarray:
    """Unit vector from the human to the robot, ``(cos(theta - phi), sin(theta - phi))``."""
    q = np.asarray(q, dtype=float)
    psi = q[..., THETA] - q[..., PHI]
    return np.stack([np.cos(psi), np.sin(psi)], axis=-1)


def leash_direction_body(phi) -> np.ndarray:
    """Same direction expressed in the robot body frame: ``(cos phi, -sin phi)``."""
    phi = np.asarray(phi, dtype=float)
    return np.stack([np.cos(phi), -np.sin(phi)], axis=-1)


def human_position(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q[..., :2] - q[..., L, None] * leash_direction_world(q)


def world_velocity(q, u) -> np.ndarray:
    """Robot velocity ``R(theta) v_body`` in the world frame."""
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    c, s = np.cos(q[..., THETA]), np.sin(q[..., THETA])
    vx, vy = u[..., 0], u[..., 1]
    return np.stack([c * vx - s * vy, s * vx + c * vy], axis=-1)


def body_direction_world(q, u, eps: float = EPS_SPEED) -> np.ndarray:
    """Unit world-frame direction of the body velocity.

    Raises ZeroSpeed when ``||v_body|| <= eps``; callers then treat every
    direction-dependent term as zero.
    """
    u = np.asarray(u, dtype=float)
    speed = np.hypot(u[..., 0], u[..., 1])
    if np.any(speed <= eps):
        raise ZeroSpeed(f"body speed {np.min(speed):.3g} m/s is below {eps:g}")
    return world_velocity(q, u) / speed[..., None]


def leash_projection(phi, u) -> np.ndarray:
    """``v_body . e_l`` and ``(e_l x v_body)_z`` in the body frame.

    Both are frame invariant, so they equal the world-frame dot and cross
    products of the leash direction with ``R(theta) v_body``.
    """
    phi = np.asarray(phi, dtype=float)
    u = np.asarray(u, dtype=float)
    c, s = np.cos(phi), np.sin(phi)
    vx, vy = u[..., 0], u[..., 1]
    return vx * c - vy * s, vx * s + vy * c


def configuration_from_positions(robot, human, theta: float) -> Configuration:
    """Invert the leash geometry: recover ``(phi, l)`` from the two positions."""
    robot = np.asarray(robot, dtype=float)
    d = robot - np.asarray(human, dtype=float)
    dist = float(np.hypot(d[0], d[1]))
    psi = math.atan2(d[1], d[0]) if dist > 0 else theta
    return Configuration(float(robot[0]), float(robot[1]), wrap_angle(theta),
                         wrap_angle(theta - psi), dist)
