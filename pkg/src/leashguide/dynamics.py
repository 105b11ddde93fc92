"""
Hybrid taut/slack dynamics of the robot-leash-human system.

Two continuous modes share the generalized coordinates ``q = (x, y, theta, phi, l)``.
In the taut mode the human is dragged along the leash and ``l`` is pinned to
the leash length; in the slack mode only the robot moves. Two flavours of the
``phi``/``l`` rates are provided:

``Variant.PAPER``
    Literal rates: an unsigned cross-product magnitude divided by ``l0`` in
    both modes, no ``omega`` term in the slack ``phi`` rate.
``Variant.GEOMETRIC``
    Rates obtained by differentiating ``x_h = x - l e_l`` with the human held
    still (slack) or moving along the leash (taut).

Everything here broadcasts over leading axes so that batches of rollouts can
be advanced together.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GuardViolation, NonFinite
from .geometry import (EPS_SPEED, L, PHI, THETA, Configuration, LeashParams,
                       leash_projection, wrap_angle)
from .tension import PAPER_MODEL, TensionModel

EVENT_TOL = 1e-9
EVENT_MAX_ITER = 60
RESET_TOL = 1e-6
DEFAULT_DT = 0.01


class Mode(enum.IntEnum):
    SLACK = 0
    TAUT = 1


class Variant(str, enum.Enum):
    PAPER = "paper"
    GEOMETRIC = "geometric"


@dataclass(frozen=True)
class DiscountCoefficients:
    alpha_x: float = 1.0
    alpha_y: float = 1.0
    alpha_theta: float = 1.0
    alpha_phi: float = 1.0

    def __post_init__(self):
        for v in self.as_array():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"discount coefficients must lie in [0, 1], got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha_x, self.alpha_y, self.alpha_theta, self.alpha_phi])

    @classmethod
    def from_sequence(cls, a) -> "DiscountCoefficients":
        return cls(*(float(v) for v in a))


PAPER_ALPHA = DiscountCoefficients(0.8, 0.8, 0.6, 0.8)
UNIT_ALPHA = DiscountCoefficients()


@dataclass(frozen=True)
class HybridState:
    q: Configuration
    mode: Mode = field(default=Mode.TAUT)


def _alpha_array(alpha) -> np.ndarray:
    if isinstance(alpha, DiscountCoefficients):
        return alpha.as_array()
    return np.asarray(alpha, dtype=float)


def mode_rates(q, u, taut: bool, alpha, variant: Variant, l0: float,
               jacobian: bool = False, abs_eps: float = 0.0):
    """Continuous-time rates of one mode, optionally with their Jacobians.

    Returns ``f`` of shape ``(..., 5)``; with ``jacobian=True`` also
    ``df/dq`` ``(..., 5, 5)`` and ``df/du`` ``(..., 5, 3)``. The unsigned cross
    product of the paper variant uses ``sign(0) = 0`` as its subgradient;
    ``abs_eps > 0`` replaces ``|c|`` by ``sqrt(c^2 + eps^2) - eps`` (exact at
    ``c = 0``, off by less than ``eps`` elsewhere) for gradient-based solvers.
    """
    q = np.asarray(q, dtype=float)
    u = np.asarray(u, dtype=float)
    variant = Variant(variant)
    a = _alpha_array(alpha) if taut else np.ones(4)
    ax, ay, ath, aph = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    th, ph, ll = q[..., THETA], q[..., PHI], q[..., L]
    vx, vy, om = u[..., 0], u[..., 1], u[..., 2]
    ct, st = np.cos(th), np.sin(th)
    cp, sp = np.cos(ph), np.sin(ph)
    vwx = ct * vx - st * vy
    vwy = st * vx + ct * vy
    p = vx * cp - vy * sp
    c = vx * sp + vy * cp
    shape = np.broadcast_shapes(q.shape[:-1], u.shape[:-1], np.shape(ax))
    zero = np.zeros(shape)

    if variant is Variant.PAPER:
        if abs_eps > 0:
            root = np.sqrt(c * c + abs_eps * abs_eps)
            absc = root - abs_eps
            sgn = c / root
        else:
            absc = np.abs(c)
            sgn = np.sign(c)
        if taut:
            dphi = -ath * om - aph * absc / l0
        else:
            dphi = -absc / l0
        # d(dphi)/dc
        k_c = -aph * sgn / l0 if taut else -sgn / l0
        k_om = -ath if taut else zero
        k_l = zero
    elif taut:
        dphi = ath * om - aph * c / l0
        k_c = -aph / l0 + zero
        k_om = ath + zero
        k_l = zero
    else:
        dphi = om - c / ll
        k_c = -1.0 / ll + zero
        k_om = 1.0 + zero
        k_l = c / ll**2
    dl = zero if taut else p

    f = np.stack([ax * vwx + zero, ay * vwy + zero, ath * om + zero,
                  dphi + zero, dl + zero], axis=-1)
    if not jacobian:
        return f

    fq = np.zeros(shape + (5, 5))
    fu = np.zeros(shape + (5, 3))
    fq[..., 0, THETA] = -ax * vwy
    fq[..., 1, THETA] = ay * vwx
    fu[..., 0, 0], fu[..., 0, 1] = ax * ct, -ax * st
    fu[..., 1, 0], fu[..., 1, 1] = ay * st, ay * ct
    fu[..., 2, 2] = ath
    # dc/dphi = p, dc/dvx = sin(phi), dc/dvy = cos(phi)
    fq[..., 3, PHI] = k_c * p
    fq[..., 3, L] = k_l
    fu[..., 3, 0], fu[..., 3, 1], fu[..., 3, 2] = k_c * sp, k_c * cp, k_om
    if not taut:
        # dp/dphi = -c, dp/dvx = cos(phi), dp/dvy = -sin(phi)
        fq[..., 4, PHI] = -c
        fu[..., 4, 0], fu[..., 4, 1] = cp, -sp
    return f, fq, fu


def taut_derivative(q, u, alpha=UNIT_ALPHA, variant: Variant = Variant.PAPER,
                    l0: float | None = None) -> np.ndarray:
    """Taut-mode rates; ``l0`` defaults to the configuration's own ``l``."""
    q = np.asarray(q, dtype=float)
    if l0 is None:
        l0 = q[..., L]
    return mode_rates(q, u, True, alpha, variant, l0)


def slack_derivative(q, u, variant: Variant = Variant.PAPER,
                     l0: float = LeashParams().l0) -> np.ndarray:
    return mode_rates(q, u, False, UNIT_ALPHA, variant, l0)


def _speed(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return np.hypot(u[..., 0], u[..., 1])


def _scalarize(b):
    b = np.asarray(b)
    return bool(b) if b.ndim == 0 else b


def guard_to_taut(q, u, force, params: LeashParams):
    """Membership in the taut region: leash not shortening and tension at threshold.

    A zero command has no direction, so it never enters the region.
    """
    p, _ = leash_projection(np.asarray(q, dtype=float)[..., PHI], u)
    moving = _speed(u) > EPS_SPEED
    return _scalarize(moving & (p >= 0) & (np.asarray(force) >= params.f_bar))


def guard_to_slack(q, u, force, params: LeashParams):
    """Membership in the slack region; a zero command never enters it either."""
    p, _ = leash_projection(np.asarray(q, dtype=float)[..., PHI], u)
    moving = _speed(u) > EPS_SPEED
    return _scalarize(moving & ((p <= 0) | (np.asarray(force) <= params.f_bar)))


def _leaves_taut(q, u, force, params):
    # Boundary points belong to both regions; the current mode is kept there.
    return np.asarray(guard_to_slack(q, u, force, params)) & ~np.asarray(
        guard_to_taut(q, u, force, params))


def reset_slack_to_taut(q, u, force, params: LeashParams) -> Configuration:
    """Reset map at the slack-to-taut event: snap ``l`` to the leash length."""
    q = np.array(q, dtype=float)
    if abs(q[L] - params.l0) > RESET_TOL:
        raise GuardViolation(f"l = {q[L]:.9g} is not within {RESET_TOL:g} of l0 = {params.l0:g}")
    if not guard_to_taut(q, u, force, params):
        raise GuardViolation("taut guard does not hold at the reset point")
    q[L] = params.l0
    return Configuration.from_array(q)


def _rk4(q, u, h, taut, alpha, variant, l0):
    h = np.asarray(h, dtype=float)[..., None]
    k1 = mode_rates(q, u, taut, alpha, variant, l0)
    k2 = mode_rates(q + 0.5 * h * k1, u, taut, alpha, variant, l0)
    k3 = mode_rates(q + 0.5 * h * k2, u, taut, alpha, variant, l0)
    k4 = mode_rates(q + h * k3, u, taut, alpha, variant, l0)
    return q + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance(q, u, h, taut, alpha, variant, l0, integrator):
    if integrator == "rk4":
        out = _rk4(q, u, h, taut, alpha, variant, l0)
    elif integrator == "euler":
        h = np.asarray(h, dtype=float)[..., None]
        out = q + h * mode_rates(q, u, taut, alpha, variant, l0)
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    if taut:
        out[..., L] = l0
    return out


def _finish(q):
    q[..., THETA] = wrap_angle(q[..., THETA])
    q[..., PHI] = wrap_angle(q[..., PHI])
    if not np.all(np.isfinite(q)):
        raise NonFinite("state left the finite range")
    return q


def forced_step(q, u, taut: bool, dt: float, alpha, params: LeashParams,
                variant: Variant, integrator: str = "euler") -> np.ndarray:
    """One step with a prescribed mode and no event handling.

    The slack step clamps ``l`` at the leash length; this is the discrete map
    used inside the local planner.
    """
    q = np.array(q, dtype=float)
    out = _advance(q, u, dt, taut, alpha, Variant(variant), params.l0, integrator)
    if not taut:
        out[..., L] = np.minimum(out[..., L], params.l0)
    return _finish(out)


def step_many(q, taut, u, dt: float, alpha=PAPER_ALPHA, params: LeashParams = LeashParams(),
              variant: Variant = Variant.GEOMETRIC, tension: TensionModel = PAPER_MODEL,
              integrator: str = "rk4"):
    """Advance a batch of hybrid states by ``dt``.

    Parameters
    ----------
    q : (B, 5) array
    taut : (B,) bool array, current modes
    u : (B, 3) array, commands held over the step

    Returns the new ``(q, taut)`` arrays. Taut-to-slack switches are decided
    by the guards at the start of the step with the predicted tension;
    slack-to-taut switches happen when ``l`` reaches the leash length, located
    by bisection and followed by the reset map and taut integration over the
    rest of the step.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt must lie in (0, 0.1], got {dt}")
    variant = Variant(variant)
    q = np.array(q, dtype=float).reshape(-1, 5)
    u = np.broadcast_to(np.asarray(u, dtype=float), q.shape[:-1] + (3,))
    taut = np.array(taut, dtype=bool).reshape(-1).copy()
    l0 = params.l0

    if taut.any():
        idx = np.flatnonzero(taut)
        f = tension.predict(q[idx], u[idx])
        taut[idx[_leaves_taut(q[idx], u[idx], f, params)]] = False

    out = np.empty_like(q)
    ti = np.flatnonzero(taut)
    si = np.flatnonzero(~taut)
    if ti.size:
        out[ti] = _advance(q[ti], u[ti], dt, True, alpha, variant, l0, integrator)
    if si.size:
        qs, us = q[si], u[si]
        end = _advance(qs, us, dt, False, alpha, variant, l0, integrator)
        cross = end[:, L] > l0
        out[si] = end
        if cross.any():
            ci = np.flatnonzero(cross)
            qe, tau = _locate_taut_event(qs[ci], us[ci], dt, variant, params, integrator)
            f = tension.predict(qe, us[ci])
            # The leash reaches full length but the command may already point
            # back (p < 0) or pull too weakly; it then stays slack at l0.
            grab = np.asarray(guard_to_taut(qe, us[ci], f, params)).reshape(-1)
            for j in np.flatnonzero(grab):
                qe[j] = reset_slack_to_taut(qe[j], us[ci][j], f[j], params)
            for flag, sel in ((True, grab), (False, ~grab)):
                if sel.any():
                    rest = _advance(qe[sel], us[ci][sel], (dt - tau)[sel], flag, alpha,
                                    variant, l0, integrator)
                    if not flag:
                        rest[:, L] = np.minimum(rest[:, L], l0)
                    out[si[ci[sel]]] = rest
            taut[si[ci[grab]]] = True
    return _finish(out), taut


def _locate_taut_event(q, u, dt, variant, params, integrator):
    """Bisection on ``g(tau) = l(tau) - l0`` from below; returns states at the event and ``tau``."""
    l0 = params.l0
    n = q.shape[0]
    lo = np.zeros(n)
    hi = np.full(n, dt)
    q_lo = q.copy()
    for _ in range(EVENT_MAX_ITER):
        todo = q_lo[:, L] - l0 < -EVENT_TOL
        if not todo.any():
            break
        mid = 0.5 * (lo + hi)
        qm = _advance(q[todo], u[todo], mid[todo], False, None, variant, l0, integrator)
        over = qm[:, L] > l0
        ti = np.flatnonzero(todo)
        hi[ti[over]] = mid[ti[over]]
        up = ti[~over]
        lo[up] = mid[up]
        q_lo[up] = qm[~over]
    return q_lo, lo


def step(state: HybridState, u, dt: float = DEFAULT_DT, alpha=PAPER_ALPHA,
         params: LeashParams = LeashParams(), variant: Variant = Variant.GEOMETRIC,
         tension: TensionModel = PAPER_MODEL, integrator: str = "rk4") -> HybridState:
    q, taut = step_many(np.asarray(state.q)[None], [state.mode == Mode.TAUT],
                        np.asarray(u, dtype=float)[None], dt, alpha, params,
                        variant, tension, integrator)
    return HybridState(Configuration.from_array(q[0]), Mode.TAUT if taut[0] else Mode.SLACK)


def rollout(q0, mode0: Mode, inputs: Sequence, dt: float = DEFAULT_DT, alpha=PAPER_ALPHA,
            params: LeashParams = LeashParams(), variant: Variant = Variant.GEOMETRIC,
            tension: TensionModel = PAPER_MODEL, integrator: str = "rk4",
            modes: Sequence[int] | None = None) -> list[HybridState]:
    """Roll the hybrid system forward under a command sequence.

    With ``modes`` given the mode of every step is prescribed (no guards, no
    events), which replays an optimized mode schedule; otherwise the guards and
    event detection of :func:`step` decide.
    """
    inputs = np.asarray(inputs, dtype=float).reshape(-1, 3)
    if inputs.shape[0] == 0:
        raise ValueError("rollout needs at least one input")
    if modes is not None and len(modes) != inputs.shape[0]:
        raise ValueError("modes and inputs must have equal length")
    states = [HybridState(Configuration.from_array(q0), Mode(mode0))]
    for k, u in enumerate(inputs):
        if modes is None:
            states.append(step(states[-1], u, dt, alpha, params, variant, tension, integrator))
        else:
            taut = bool(modes[k])
            qn = forced_step(np.asarray(states[-1].q), u, taut, dt, alpha, params,
                             variant, integrator)
            states.append(HybridState(Configuration.from_array(qn), Mode(int(taut))))
    return states
