"""Circular obstacles, signed-distance clearances and map file readers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import Configuration, LeashParams, human_position


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float
    # Obstacles may drift at constant velocity; the shipped scenarios are static.
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class ObstacleSet:
    circles: tuple[Circle, ...] = ()
    safety_margin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "circles", tuple(self.circles))
        if not self.safety_margin >= 0:
            raise ValueError("safety margin must be nonnegative")

    def __len__(self):
        return len(self.circles)

    @property
    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.circles], dtype=float).reshape(-1, 2)

    @property
    def radii(self) -> np.ndarray:
        return np.array([c.radius for c in self.circles], dtype=float)

    @property
    def velocities(self) -> np.ndarray:
        return np.array([c.velocity for c in self.circles], dtype=float).reshape(-1, 2)

    def with_margin(self, d: float) -> "ObstacleSet":
        return ObstacleSet(self.circles, d)

    def near(self, point, radius: float) -> "ObstacleSet":
        """Subset whose inflated discs come within ``radius`` of ``point``."""
        if not self.circles:
            return self
        dist = np.hypot(*(self.centers - np.asarray(point, dtype=float)).T) - self.radii
        keep = [c for c, dd in zip(self.circles, dist) if dd <= radius]
        return ObstacleSet(tuple(keep), self.safety_margin)


def clearances(q, obstacles: ObstacleSet, params: LeashParams, margin: float | None = None):
    """Signed clearances of the robot and human discs, minimized over obstacles.

    ``q`` may be stacked ``(..., 5)``; a positive value means the disc keeps
    at least ``margin`` (default: the set's safety margin) from every obstacle.
    """
    q = np.asarray(q, dtype=float)
    d = obstacles.safety_margin if margin is None else margin
    if not obstacles.circles:
        inf = np.full(q.shape[:-1], np.inf)
        return inf, inf
    c, r = obstacles.centers, obstacles.radii
    robot = q[..., None, :2] - c
    human = human_position(q)[..., None, :] - c
    cr = np.hypot(robot[..., 0], robot[..., 1]) - (d + params.robot_radius + r)
    ch = np.hypot(human[..., 0], human[..., 1]) - (d + params.human_radius + r)
    return cr.min(axis=-1), ch.min(axis=-1)


def collision_free(config, obstacles: ObstacleSet, params: LeashParams) -> bool:
    """Both discs at least the safety margin away from every obstacle (boundary inclusive)."""
    cr, ch = clearances(config, obstacles, params)
    return bool(np.all(cr >= 0) and np.all(ch >= 0))


def obstacles_to_json(obstacles: ObstacleSet) -> dict:
    return {
        "schema_version": 1,
        "safety_margin": obstacles.safety_margin,
        "circles": [
            {"center": list(c.center), "radius": c.radius,
             **({"velocity": list(c.velocity)} if any(c.velocity) else {})}
            for c in obstacles.circles
        ],
    }


def obstacles_from_json(doc: dict, source: str = "<map>") -> ObstacleSet:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: map document must be an object")
    unknown = set(doc) - {"schema_version", "safety_margin", "circles"}
    if unknown:
        raise ConfigError(f"{source}: unknown key {sorted(unknown)[0]!r}")
    circles = []
    for i, item in enumerate(doc.get("circles", [])):
        key = f"circles[{i}]"
        if not isinstance(item, dict) or set(item) - {"center", "radius", "velocity"}:
            raise ConfigError(f"{source}: {key}: expected keys center, radius[, velocity]")
        try:
            center = tuple(float(v) for v in item["center"])
            vel = tuple(float(v) for v in item.get("velocity", (0.0, 0.0)))
            if len(center) != 2 or len(vel) != 2:
                raise ValueError("vectors must have two components")
            circles.append(Circle(center, float(item["radius"]), vel))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {key}: {exc}") from None
    try:
        return ObstacleSet(tuple(circles), float(doc.get("safety_margin", 0.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: safety_margin: {exc}") from None


def parse_occupancy_grid(text: str, source: str = "<grid>") -> ObstacleSet:
    """Occupancy grid to circles: one inscribed circle per ``#`` cell.

    Header lines ``resolution <m>`` (required), ``origin <x> <y>`` and
    ``margin <m>`` precede the rows; the first row is the top (largest y) and
    ``origin`` is the world position of the bottom-left cell corner.
    """
    res = None
    origin = (0.0, 0.0)
    margin = 0.0
    rows: list[tuple[int, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("//"):
            continue
        head = line.split()
        if head[0] in ("resolution", "origin", "margin"):
            if rows:
                raise ConfigError(f"{source}: line {lineno}: header after grid rows")
            try:
                if head[0] == "resolution":
                    res = float(head[1])
                elif head[0] == "origin":
                    origin = (float(head[1]), float(head[2]))
                else:
                    margin = float(head[1])
            except (IndexError, ValueError):
                raise ConfigError(f"{source}: line {lineno}: malformed {head[0]!r} header") from None
            continue
        if set(line) - {"#", "."}:
            raise ConfigError(f"{source}: line {lineno}: grid rows may only contain '#' and '.'")
        rows.append((lineno, line))
    if res is None or not res > 0:
        raise ConfigError(f"{source}: missing or nonpositive 'resolution' header")
    if rows and len({len(r) for _, r in rows}) != 1:
        raise ConfigError(f"{source}: line {rows[0][0]}: grid rows differ in length")
    circles = []
    n = len(rows)
    for i, (_, row) in enumerate(rows):
        y = origin[1] + (n - 1 - i + 0.5) * res
        for j, ch in enumerate(row):
            if ch == "#":
                circles.append(Circle((origin[0] + (j + 0.5) * res, y), res / 2.0))
    return ObstacleSet(tuple(circles), margin)


def load_map(path: str | Path) -> ObstacleSet:
    """Read a JSON circle list or a plain-text occupancy grid."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        return obstacles_from_json(doc, str(path))
    return parse_occupancy_grid(text, str(path))
