"""
A* search over an ``(x, y, phi)`` lattice.

Lattice nodes sit at integer offsets from an origin (``plan`` anchors it at
the start). A move changes each axis by ``-step``, ``0`` or ``+step``; the
robot heading is not a lattice axis but is carried along every path with a
one-step taut approximation, and every waypoint (robot and derived human
position) is collision-checked with it.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np

from .dynamics import PAPER_ALPHA, DiscountCoefficients, Variant, _alpha_array
from .errors import ConfigError, NoPath
from .geometry import Configuration, LeashParams, human_position, wrap_angle
from .obstacles import ObstacleSet, collision_free

_MOVES = tuple(m for m in itertools.product((-1, 0, 1), repeat=3) if m != (0, 0, 0))
_TOL = 1e-9


@dataclass(frozen=True)
class LatticeSpec:
    dx: float = 0.5
    dy: float = 0.25
    dphi: float = math.pi / 8
    x_bounds: tuple[float, float] = (-10.0, 10.0)
    y_bounds: tuple[float, float] = (-10.0, 10.0)
    phi_bounds: tuple[float, float] | None = None   # None: full wrapped circle
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if min(self.dx, self.dy, self.dphi) <= 0:
            raise ValueError("lattice steps must be positive")
        if self.phi_bounds is None:
            bins = 2 * math.pi / self.dphi
            if abs(bins - round(bins)) > 1e-9:
                raise ValueError("dphi must divide 2*pi when phi wraps")

    @property
    def phi_bins(self) -> int | None:
        return None if self.phi_bounds is not None else int(round(2 * math.pi / self.dphi))

    @property
    def degenerate(self) -> bool:
        boxes = [self.x_bounds, self.y_bounds]
        if self.phi_bounds is not None:
            boxes.append(self.phi_bounds)
        return any(hi <= lo for lo, hi in boxes)

    def anchored(self, x: float, y: float, phi: float) -> "LatticeSpec":
        return replace(self, origin=(float(x), float(y), float(phi)))

    # index <-> world
    def to_world(self, idx) -> tuple[float, float, float]:
        i, j, k = idx
        x0, y0, p0 = self.origin
        return (x0 + i * self.dx, y0 + j * self.dy, float(wrap_angle(p0 + k * self.dphi)))

    def to_index(self, node) -> tuple[int, int, int]:
        x0, y0, p0 = self.origin
        k = round(float(wrap_angle(node[2] - p0)) / self.dphi) if self.phi_bounds is None \
            else round((node[2] - p0) / self.dphi)
        return (round((node[0] - x0) / self.dx), round((node[1] - y0) / self.dy),
                self._wrap_k(k))

    def _wrap_k(self, k: int) -> int:
        n = self.phi_bins
        return k % n if n else k

    def in_bounds(self, idx) -> bool:
        x0, y0, p0 = self.origin
        x, y = x0 + idx[0] * self.dx, y0 + idx[1] * self.dy
        ok = (self.x_bounds[0] - _TOL <= x <= self.x_bounds[1] + _TOL
              and self.y_bounds[0] - _TOL <= y <= self.y_bounds[1] + _TOL)
        if ok and self.phi_bounds is not None:
            phi = p0 + idx[2] * self.dphi
            ok = self.phi_bounds[0] - _TOL <= phi <= self.phi_bounds[1] + _TOL
        return ok


@dataclass(frozen=True)
class GoalSpec:
    x_goal: float
    y_goal: float
    phi_goal: float = 0.0
    theta_goal: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x_goal, self.y_goal, self.phi_goal,
                                              self.theta_goal, self.lam)):
            raise ValueError("goal fields must be finite")


class SearchResult(NamedTuple):
    waypoints: list        # of Configuration
    cost: float
    expanded: int


def _successor_indices(idx, spec: LatticeSpec):
    if spec.degenerate:
        return []
    out = []
    for di, dj, dk in _MOVES:
        nxt = (idx[0] + di, idx[1] + dj, spec._wrap_k(idx[2] + dk))
        if spec.in_bounds(nxt):
            out.append(nxt)
    return out


def successors(node, spec: LatticeSpec) -> list[tuple[float, float, float]]:
    """World-frame lattice neighbours of ``node = (x, y, phi)`` inside the bounds."""
    return [spec.to_world(i) for i in _successor_indices(spec.to_index(node), spec)]


def step_cost(a, b) -> float:
    dphi = float(wrap_angle(b[2] - a[2]))
    return (b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2 + dphi * dphi


def node_cost(path: Sequence) -> float:
    """Sum of squared steps along ``path`` (nodes ``(x, y, phi, ...)``), phi wrapped."""
    if len(path) < 1:
        raise ValueError("path must contain at least one node")
    return float(sum(step_cost(a, b) for a, b in zip(path[:-1], path[1:])))


def heuristic(node, goal: GoalSpec, theta_n: float) -> float:
    dphi = float(wrap_angle(node[2] - goal.phi_goal))
    return ((node[0] - goal.x_goal) ** 2 + (node[1] - goal.y_goal) ** 2 + dphi * dphi
            + goal.lam * (1.0 - math.cos(theta_n - goal.theta_goal)))


def propagate_theta(theta: float, a, b, alpha=PAPER_ALPHA, l0: float = LeashParams().l0,
                    variant: Variant = Variant.PAPER) -> float:
    """Heading after the lattice move ``a -> b`` under one taut step.

    The command is the world displacement over a nominal step time with the
    yaw rate chosen so that the taut leash-angle rate of ``variant`` realizes
    the move's ``Delta phi``; the step time cancels out.
    """
    al = _alpha_array(alpha)
    if al[2] == 0:
        return float(theta)
    psi = theta - a[2]
    cross = math.cos(psi) * (b[1] - a[1]) - math.sin(psi) * (b[0] - a[0])
    dphi = float(wrap_angle(b[2] - a[2]))
    if Variant(variant) is Variant.PAPER:
        return float(wrap_angle(theta - dphi - al[3] * abs(cross) / l0))
    return float(wrap_angle(theta + dphi + al[3] * cross / l0))


def _at_goal(node, goal: GoalSpec, spec: LatticeSpec) -> bool:
    return (abs(node[0] - goal.x_goal) < spec.dx - _TOL
            and abs(node[1] - goal.y_goal) < spec.dy - _TOL
            and abs(float(wrap_angle(node[2] - goal.phi_goal))) < spec.dphi - _TOL)


def search(start: Configuration, goal: GoalSpec, obstacles: ObstacleSet = ObstacleSet(),
           spec: LatticeSpec = LatticeSpec(), params: LeashParams = LeashParams(),
           alpha=PAPER_ALPHA, admissible: bool = False,
           max_expansions: int | None = None,
           variant: Variant = Variant.PAPER, slack_moves: bool = False) -> SearchResult:
    """A* from the start's lattice cell; ``admissible`` zeroes the heuristic.

    ``slack_moves`` switches to the human-tracking search of ``search_slack``.
    """
    if slack_moves:
        return search_slack(start, goal, obstacles, spec, params, alpha, admissible,
                            max_expansions)
    start = Configuration(*(float(v) for v in start))
    if not collision_free(start._replace(l=params.l0), obstacles, params):
        raise ConfigError("start configuration is in collision")
    spec = spec.anchored(start.x, start.y, start.phi)
    origin = (0, 0, 0)
    if not spec.in_bounds(origin):
        raise ConfigError("start lies outside the lattice bounds")

    theta = {origin: start.theta}
    g = {origin: 0.0}
    parent: dict = {origin: None}
    counter = itertools.count()

    def h(idx):
        return 0.0 if admissible else heuristic(spec.to_world(idx), goal, theta[idx])

    open_heap = [(h(origin), next(counter), origin)]
    closed = set()
    expanded = 0
    while open_heap:
        _, _, idx = heapq.heappop(open_heap)
        if idx in closed:
            continue
        closed.add(idx)
        node = spec.to_world(idx)
        if _at_goal(node, goal, spec):
            return SearchResult(_unwind(idx, parent, theta, spec, params), g[idx], expanded)
        expanded += 1
        if max_expansions is not None and expanded > max_expansions:
            break
        for nxt in _successor_indices(idx, spec):
            if nxt in closed:
                continue
            wn = spec.to_world(nxt)
            cand = g[idx] + step_cost(node, wn)
            if cand >= g.get(nxt, math.inf):
                continue
            th = propagate_theta(theta[idx], node, wn, alpha, params.l0, variant)
            if not collision_free(Configuration(wn[0], wn[1], th, wn[2], params.l0),
                                  obstacles, params):
                continue
            g[nxt] = cand
            theta[nxt] = th
            parent[nxt] = idx
            heapq.heappush(open_heap, (cand + h(nxt), next(counter), nxt))
    raise NoPath("open set exhausted without reaching the goal")


HUMAN_BIN = 0.25
L_MIN = 0.5


def slack_move(robot, human, a, b, alpha=PAPER_ALPHA, l0: float = LeashParams().l0,
               l_min: float = L_MIN):
    """Human position, heading and leash distance after the move ``a -> b``.

    The human stands still while the robot stays within ``l0`` of them; a
    move that would stretch the leash drags the human one taut step of the
    geometric model (the leash turns by ``alpha_phi * cross / l0`` and the
    human sits ``l0`` behind the robot). Returns ``None`` when the robot
    would come closer than ``l_min``.
    """
    al = _alpha_array(alpha)
    rb = np.array(b[:2], dtype=float)
    d = rb - np.asarray(human)
    dist = float(np.hypot(*d))
    if dist <= l0:
        if dist < l_min:
            return None
        psi = math.atan2(d[1], d[0])
        return np.asarray(human, dtype=float), float(wrap_angle(b[2] + psi)), dist
    ra = np.asarray(robot, dtype=float)
    rel = ra - np.asarray(human)
    psi = math.atan2(rel[1], rel[0])
    dx, dy = rb - ra
    cross = math.cos(psi) * dy - math.sin(psi) * dx
    psi = psi + al[3] * cross / l0
    h = rb - l0 * np.array([math.cos(psi), math.sin(psi)])
    return h, float(wrap_angle(b[2] + psi)), l0


def search_slack(start: Configuration, goal: GoalSpec, obstacles: ObstacleSet = ObstacleSet(),
                 spec: LatticeSpec = LatticeSpec(), params: LeashParams = LeashParams(),
                 alpha=PAPER_ALPHA, admissible: bool = False,
                 max_expansions: int | None = None) -> SearchResult:
    """A* whose nodes also track the human, so that paths may use slack.

    A node is a lattice cell plus the human position binned to
    ``HUMAN_BIN``; moves follow ``slack_move`` and waypoints carry the
    resulting ``l``. Robot and human are collision-checked at every node.
    """
    start = Configuration(*(float(v) for v in start))
    if not collision_free(start, obstacles, params):
        raise ConfigError("start configuration is in collision")
    spec = spec.anchored(start.x, start.y, start.phi)
    origin = (0, 0, 0)
    if not spec.in_bounds(origin):
        raise ConfigError("start lies outside the lattice bounds")
    def key(idx, h):
        return idx + (round(h[0] / HUMAN_BIN), round(h[1] / HUMAN_BIN))

    h0 = human_position(np.asarray(start))
    k0 = key(origin, h0)
    info = {k0: (origin, h0, start.theta, start.l)}
    g = {k0: 0.0}
    parent: dict = {k0: None}
    counter = itertools.count()

    def hcost(idx, theta):
        return 0.0 if admissible else heuristic(spec.to_world(idx), goal, theta)

    open_heap = [(hcost(origin, start.theta), next(counter), k0)]
    closed = set()
    expanded = 0
    while open_heap:
        _, _, kk = heapq.heappop(open_heap)
        if kk in closed:
            continue
        closed.add(kk)
        idx, hum, _, _ = info[kk]
        node = spec.to_world(idx)
        if _at_goal(node, goal, spec):
            out = []
            while kk is not None:
                i, h, t, l = info[kk]
                x, y, phi = spec.to_world(i)
                out.append(Configuration(x, y, float(t), phi, float(l)))
                kk = parent[kk]
            return SearchResult(out[::-1], g[key(idx, hum)], expanded)
        expanded += 1
        if max_expansions is not None and expanded > max_expansions:
            break
        for nxt in _successor_indices(idx, spec):
            wn = spec.to_world(nxt)
            moved = slack_move(node[:2], hum, node, wn, alpha, params.l0)
            if moved is None:
                continue
            hn, thn, ln = moved
            kn = key(nxt, hn)
            if kn in closed:
                continue
            cand = g[kk] + step_cost(node, wn)
            if cand >= g.get(kn, math.inf):
                continue
            if not collision_free(Configuration(wn[0], wn[1], thn, wn[2], ln), obstacles, params):
                continue
            g[kn] = cand
            info[kn] = (nxt, hn, thn, ln)
            parent[kn] = kk
            heapq.heappush(open_heap, (cand + hcost(nxt, thn), next(counter), kn))
    raise NoPath("open set exhausted without reaching the goal")


def _unwind(idx, parent, theta, spec, params):
    out = []
    while idx is not None:
        x, y, phi = spec.to_world(idx)
        out.append(Configuration(x, y, float(theta[idx]), phi, params.l0))
        idx = parent[idx]
    return out[::-1]


def plan(start: Configuration, goal: GoalSpec, obstacles: ObstacleSet = ObstacleSet(),
         spec: LatticeSpec = LatticeSpec(), params: LeashParams = LeashParams(),
         alpha=PAPER_ALPHA, admissible: bool = False,
         variant: Variant = Variant.PAPER, slack_moves: bool = False) -> list[Configuration]:
    return search(start, goal, obstacles, spec, params, alpha, admissible,
                  variant=variant, slack_moves=slack_moves).waypoints


def path_cost(waypoints: Sequence[Configuration]) -> float:
    return node_cost([(w.x, w.y, w.phi) for w in waypoints])


def waypoints_to_json(waypoints: Sequence[Configuration], cost: float | None = None) -> dict:
    doc = {"schema_version": 1, "waypoints": [list(map(float, w)) for w in waypoints]}
    if cost is not None:
        doc["cost"] = float(cost)
    return doc


def waypoints_from_json(doc: dict) -> list[Configuration]:
    if not isinstance(doc, dict) or doc.get("schema_version") != 1:
        raise ConfigError("waypoints: unsupported or missing schema_version")
    if "waypoints" not in doc:
        raise ConfigError("waypoints: missing key 'waypoints'")
    try:
        return [Configuration(*(float(v) for v in w)) for w in doc["waypoints"]]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"waypoints: malformed entry ({exc})") from None


def as_array(waypoints: Sequence[Configuration]) -> np.ndarray:
    return np.array([list(w) for w in waypoints], dtype=float).reshape(-1, 5)
