"""
Closed-loop simulation: plant, sensing, human tracking and replanning.

The plant integrates the geometric hybrid model. The local planner predicts
with the same geometry by default; ``planner_variant=Variant.PAPER`` selects
the discounted sign-folded model instead, whose heading response has the
opposite sign in the robot turn rate and does not hold up in closed loop.
The robot pose is assumed known; the human is
observed through noisy position measurements filtered by a constant-velocity
Kalman filter, and the leash tension through a noisy force reading.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import global_planner as gp
from . import local_planner as lp
from .dynamics import PAPER_ALPHA, DiscountCoefficients, HybridState, Mode, Variant, step
from .errors import ConfigError, Infeasible, MaxIterations, NonPSD, NoPath
from .geometry import L, PHI, Configuration, LeashParams, configuration_from_positions, \
    human_position, wrap_angle
from .obstacles import Circle, ObstacleSet, clearances
from .tension import PAPER_MODEL, TensionModel

log = logging.getLogger(__name__)

WAYPOINT_RADIUS = 0.3
WAYPOINT_ANGLE = math.pi / 8
STALL_REPLANS = 8          # replans without progress toward the waypoint before a global replan
STALL_PROGRESS = 0.05      # m, approach that counts as progress
GOAL_RADIUS = 0.2
GOAL_ANGLE = math.pi / 8

SUCCESS = "success"
TIMEOUT = "timeout"
INFEASIBLE = "PlannerInfeasible"
NO_PATH = "NoPath"
COLLISION = "collision"


@dataclass(frozen=True)
class ScenarioConfig:
    obstacles: ObstacleSet
    start: Configuration
    goal: gp.GoalSpec
    leash: LeashParams = LeashParams()
    alpha: DiscountCoefficients = PAPER_ALPHA
    tension: TensionModel = PAPER_MODEL
    sigma_f: float = 0.5
    sigma_h: float = 0.01
    replan_period: float = 0.5
    sim_dt: float = 0.05
    max_time: float = 120.0
    rng_seed: int = 0
    start_mode: Mode = Mode.TAUT
    lattice: gp.LatticeSpec = gp.LatticeSpec()
    weights: lp.PlannerWeights = lp.PlannerWeights()
    bounds: lp.PlannerBounds = lp.PlannerBounds()
    planner_variant: Variant = Variant.GEOMETRIC
    plant_variant: Variant = Variant.GEOMETRIC
    slack_aware_global: bool = True
    kf_sigma_a: float = 0.5
    compliance_delay: bool = False
    enumerate_fallback: bool = False     # exhaustive schedule search is too slow per replan
    waypoints: tuple | None = None   # overrides the global planner when given

    def __post_init__(self):
        if not self.sim_dt > 0 or self.sim_dt > self.replan_period:
            raise ValueError("need 0 < sim_dt <= replan_period")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if self.sigma_f < 0 or self.sigma_h < 0:
            raise ValueError("noise levels must be nonnegative")
        object.__setattr__(self, "start", Configuration(*(float(v) for v in self.start)))

    @property
    def steps_per_replan(self) -> int:
        return max(1, math.ceil(self.replan_period / self.sim_dt - 1e-9))


@dataclass(frozen=True)
class KalmanTrackerState:
    estimate: np.ndarray     # (4,): px, py, vx, vy
    covariance: np.ndarray   # (4, 4)

    @property
    def position(self) -> np.ndarray:
        return self.estimate[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.estimate[2:]


def kf_init(measurement, sigma_h: float, velocity_std: float = 0.5) -> KalmanTrackerState:
    p = np.diag([max(sigma_h, 1e-6) ** 2] * 2 + [velocity_std ** 2] * 2)
    return KalmanTrackerState(np.array([measurement[0], measurement[1], 0.0, 0.0]), p)


def kf_update(tracker: KalmanTrackerState, measurement, dt: float, sigma_h: float = 0.01,
              sigma_a: float = 0.5) -> KalmanTrackerState:
    """Constant-velocity predict plus position update (Joseph form)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    G = np.array([[0.5 * dt * dt, 0.0], [0.0, 0.5 * dt * dt], [dt, 0.0], [0.0, dt]])
    Q = sigma_a ** 2 * (G @ G.T)
    x = F @ tracker.estimate
    P = F @ tracker.covariance @ F.T + Q
    H = np.zeros((2, 4))
    H[0, 0] = H[1, 1] = 1.0
    R = sigma_h ** 2 * np.eye(2)
    S = H @ P @ H.T + R
    K = np.linalg.solve(S.T, (P @ H.T).T).T
    x = x + K @ (np.asarray(measurement, dtype=float) - H @ x)
    A = np.eye(4) - K @ H
    P = A @ P @ A.T + K @ R @ K.T
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)) or np.linalg.eigvalsh(P).min() < -1e-9:
        raise NonPSD("tracker covariance left the PSD cone")
    return KalmanTrackerState(x, P)


# --------------------------------------------------------------------------
# plant and sensing

def plant_tension(state: HybridState, u, config: ScenarioConfig) -> float:
    if state.mode != Mode.TAUT:
        return 0.0
    return float(config.tension.plant_force(np.asarray(state.q), u))


def plant_step(state: HybridState, u, config: ScenarioConfig) -> HybridState:
    """One geometric hybrid step at ``sim_dt``."""
    return step(state, u, config.sim_dt, config.alpha, config.leash, config.plant_variant,
                config.tension)


def sense(state: HybridState, u, config: ScenarioConfig, rng: np.random.Generator):
    """Noisy tension and human-position readings."""
    f = plant_tension(state, u, config) + config.sigma_f * rng.standard_normal()
    h = human_position(np.asarray(state.q)) + config.sigma_h * rng.standard_normal(2)
    return float(f), h


# --------------------------------------------------------------------------
# logs and metrics

SIMLOG_COLUMNS = ("t", "x", "y", "theta", "phi", "l", "mode", "xh", "yh", "xh_est", "yh_est",
                  "vbx", "vby", "omega", "F_pred", "F_meas", "waypoint_idx")


@dataclass
class SimLog:
    dt: float
    rows: list = field(default_factory=list)
    status: str = ""

    def append(self, k, state: HybridState, est, u, f_pred, f_meas, wp_idx):
        q = state.q
        h = human_position(np.asarray(q))
        self.rows.append((k * self.dt, q.x, q.y, q.theta, q.phi, q.l, int(state.mode),
                          float(h[0]), float(h[1]), float(est[0]), float(est[1]),
                          float(u[0]), float(u[1]), float(u[2]), float(f_pred), float(f_meas),
                          int(wp_idx)))

    def column(self, name: str) -> np.ndarray:
        i = SIMLOG_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def states(self) -> np.ndarray:
        return np.column_stack([self.column(c) for c in ("x", "y", "theta", "phi", "l")])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SIMLOG_COLUMNS)
        for r in self.rows:
            w.writerow([str(v) if isinstance(v, int) else repr(float(v)) for v in r])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path) -> "SimLog":
        path = Path(path)
        try:
            rows = list(csv.reader(path.read_text().splitlines()))
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        if not rows or tuple(rows[0]) != SIMLOG_COLUMNS:
            raise ConfigError(f"{path}: not a simulation log (bad header)")
        out = []
        ints = {SIMLOG_COLUMNS.index("mode"), SIMLOG_COLUMNS.index("waypoint_idx")}
        for lineno, r in enumerate(rows[1:], start=2):
            if len(r) != len(SIMLOG_COLUMNS):
                raise ConfigError(f"{path}:{lineno}: expected {len(SIMLOG_COLUMNS)} fields")
            try:
                out.append(tuple(int(v) if i in ints else float(v) for i, v in enumerate(r)))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric field") from None
        dt = out[1][0] - out[0][0] if len(out) > 1 else 0.0
        return cls(dt, out)


@dataclass
class Metrics:
    status: str
    time_to_goal: float | None
    min_clearance: float
    slack_intervals: list
    max_human_speed_during_slack: float
    max_est_human_speed_during_slack: float
    collision_count: int
    sim_time: float
    replans: int

    @property
    def success(self) -> bool:
        return self.status == SUCCESS and self.collision_count == 0

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "status": self.status,
            "success": self.success,
            "time_to_goal": self.time_to_goal,
            "min_clearance": self.min_clearance if math.isfinite(self.min_clearance) else None,
            "slack_intervals": [list(iv) for iv in self.slack_intervals],
            "max_human_speed_during_slack": self.max_human_speed_during_slack,
            "max_est_human_speed_during_slack": self.max_est_human_speed_during_slack,
            "collision_count": self.collision_count,
            "sim_time": self.sim_time,
            "replans": self.replans,
        }

    @classmethod
    def from_json(cls, doc: dict, source: str = "<metrics>") -> "Metrics":
        if not isinstance(doc, dict) or doc.get("schema_version") != 1:
            raise ConfigError(f"{source}: unsupported or missing schema_version")
        try:
            return cls(doc["status"], doc["time_to_goal"],
                       math.inf if doc["min_clearance"] is None else float(doc["min_clearance"]),
                       [tuple(float(v) for v in iv) for iv in doc["slack_intervals"]],
                       float(doc["max_human_speed_during_slack"]),
                       float(doc["max_est_human_speed_during_slack"]),
                       int(doc["collision_count"]), float(doc["sim_time"]), int(doc["replans"]))
        except KeyError as exc:
            raise ConfigError(f"{source}: missing key {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: {exc}") from None


def compute_metrics(simlog: SimLog, config: ScenarioConfig, status: str,
                    time_to_goal: float | None, replans: int) -> Metrics:
    q = simlog.states()
    mode = simlog.column("mode").astype(int)
    t = simlog.column("t")
    cr, ch = clearances(q, config.obstacles, config.leash, margin=0.0)
    clear = np.minimum(cr, ch)
    min_clear = float(clear.min()) if np.isfinite(clear).all() else float("inf")
    collisions = int(np.sum(clear < -1e-12))

    intervals = []
    start = None
    for k, s in enumerate(mode):
        if s == 0 and start is None:
            start = k
        if s == 1 and start is not None:
            intervals.append((float(t[start]), float(t[k])))
            start = None
    if start is not None:
        intervals.append((float(t[start]), float(t[-1])))

    def speed(xc, yc, span):
        # displacement over windows of ``span`` steps that stay slack throughout
        slack = mode == 0
        if len(mode) <= span:
            return 0.0
        inside = np.array([slack[k:k + span + 1].all() for k in range(len(mode) - span)])
        if not inside.any():
            return 0.0
        x, y = simlog.column(xc), simlog.column(yc)
        v = np.hypot(x[span:] - x[:-span], y[span:] - y[:-span]) / (span * simlog.dt)
        return float(v[inside].max())

    if status == SUCCESS and collisions > 0:
        status = COLLISION
    return Metrics(status, time_to_goal, min_clear, intervals, speed("xh", "yh", 1),
                   speed("xh_est", "yh_est", config.steps_per_replan), collisions, float(t[-1]), replans)


# --------------------------------------------------------------------------
# loop

def _angle_close(a, b, tol) -> bool:
    return abs(float(wrap_angle(a - b))) < tol


def _planner_configuration(q: Configuration, human_est, f_meas: float, config: ScenarioConfig):
    qp = configuration_from_positions((q.x, q.y), human_est, q.theta)
    l = min(qp.l, config.leash.l0)
    if f_meas >= config.leash.f_bar:
        l = config.leash.l0
    return np.array([q.x, q.y, q.theta, qp.phi, l])


def _shift(sol: lp.CollocationSolution, elapsed: float, q_curr):
    """Previous plan re-sampled ``elapsed`` seconds later, as a warm start."""
    n = sol.n
    dt = sol.dt
    times = np.minimum(np.arange(n + 1) * dt + elapsed, sol.t_final)
    knots = np.arange(n + 1) * dt
    states = np.empty((n + 1, 5))
    for c in range(5):
        ref = np.unwrap(sol.states[:, c]) if c in (2, 3) else sol.states[:, c]
        states[:, c] = np.interp(times, knots, ref)
    states[:, 2:4] = wrap_angle(states[:, 2:4])
    states[0] = q_curr
    idx = np.minimum((times[:-1] / dt).astype(int), n - 1)
    forces = np.interp(times, knots, sol.forces)
    return states, sol.inputs[idx].copy(), forces, sol.t_final


def _command_at(sol: lp.CollocationSolution, tau: float) -> np.ndarray:
    return sol.inputs[min(int(tau / sol.dt), sol.n - 1)]


def run(config: ScenarioConfig) -> tuple[SimLog, Metrics]:
    """Closed-loop run from ``config.start`` toward ``config.goal``."""
    rng = np.random.default_rng(config.rng_seed)
    simlog = SimLog(config.sim_dt)
    state = HybridState(config.start, Mode(config.start_mode))
    goal = config.goal
    u0 = np.zeros(3)

    f_meas, h_meas = sense(state, u0, config, rng)
    tracker = kf_init(h_meas, config.sigma_h)

    def global_plan(q_from):
        return gp.plan(q_from, goal, config.obstacles, config.lattice, config.leash,
                       config.alpha, slack_moves=config.slack_aware_global)

    if config.waypoints is not None:
        waypoints = [Configuration(*w) for w in config.waypoints]
    else:
        try:
            waypoints = global_plan(config.start)
        except NoPath:
            simlog.append(0, state, tracker.position, u0, plant_tension(state, u0, config),
                          f_meas, 0)
            simlog.status = NO_PATH
            return simlog, compute_metrics(simlog, config, NO_PATH, None, 0)
    wp_idx = min(1, len(waypoints) - 1)

    k = 0
    max_steps = int(round(config.max_time / config.sim_dt))
    status = TIMEOUT
    time_to_goal = None
    prev: lp.CollocationSolution | None = None
    prev_age = 0.0
    replans = 0
    delay_left = 0
    per = config.steps_per_replan
    stalled, best_dist = 0, math.inf

    def at_goal(q):
        return (math.hypot(q.x - goal.x_goal, q.y - goal.y_goal) < GOAL_RADIUS
                and _angle_close(q.phi, goal.phi_goal, GOAL_ANGLE))

    while True:
        q = state.q
        if at_goal(q):
            status, time_to_goal = SUCCESS, k * config.sim_dt
            break
        if k >= max_steps:
            break
        while wp_idx < len(waypoints) - 1:
            w = waypoints[wp_idx]
            if math.hypot(q.x - w.x, q.y - w.y) < WAYPOINT_RADIUS and \
                    _angle_close(q.phi, w.phi, WAYPOINT_ANGLE):
                wp_idx += 1
                stalled, best_dist = 0, math.inf
            else:
                break
        q_curr = _planner_configuration(q, tracker.position, f_meas, config)
        w = waypoints[wp_idx]
        dist = math.hypot(q.x - w.x, q.y - w.y)
        if dist < best_dist - STALL_PROGRESS:
            stalled, best_dist = 0, dist
        if stalled >= STALL_REPLANS and config.waypoints is None:
            # Stuck on one waypoint: the route no longer matches where the human is.
            stalled, best_dist = 0, math.inf
            try:
                waypoints, prev = global_plan(q_curr), None
                wp_idx = min(1, len(waypoints) - 1)
            except (NoPath, ConfigError) as exc:
                log.debug("global replan failed: %s", exc)
        target = waypoints[wp_idx]
        if wp_idx == len(waypoints) - 1:
            target = Configuration(goal.x_goal, goal.y_goal, goal.theta_goal, goal.phi_goal,
                                   config.leash.l0)
        sol = _plan(config, q_curr, np.asarray(target), prev, prev_age)
        replans += 1
        stalled += 1
        if sol is None:
            if prev is not None and prev_age + per * config.sim_dt <= prev.t_final:
                sol, offset = prev, prev_age
            else:
                status = INFEASIBLE
                break
        else:
            offset = 0.0
        prev, prev_age = sol, offset

        for j in range(per):
            if k >= max_steps:
                break
            u = _command_at(sol, offset + j * config.sim_dt)
            if delay_left > 0:
                u = np.zeros(3)
                delay_left -= 1
            f_pred = plant_tension(state, u, config)
            simlog.append(k, state, tracker.position, u, f_pred, f_meas, wp_idx)
            was_taut = state.mode == Mode.TAUT
            state = plant_step(state, u, config)
            if config.compliance_delay and not was_taut and state.mode == Mode.TAUT:
                delay_left = int(rng.integers(0, 3))
            f_meas, h_meas = sense(state, u, config, rng)
            tracker = kf_update(tracker, h_meas, config.sim_dt, config.sigma_h,
                                config.kf_sigma_a)
            k += 1
            if at_goal(state.q):
                break
        prev_age += per * config.sim_dt

    simlog.append(k, state, tracker.position, u0, plant_tension(state, u0, config), f_meas,
                  wp_idx)
    simlog.status = status
    return simlog, compute_metrics(simlog, config, status, time_to_goal, replans)


def _plan(config: ScenarioConfig, q_curr, target, prev, prev_age):
    obstacles = config.obstacles
    try:
        problem = lp.LocalProblem(q_curr, target, obstacles, config.weights, config.bounds,
                                  config.tension, config.alpha, config.leash,
                                  config.planner_variant)
        if prev is not None and prev.n == config.bounds.n:
            warm = _shift(prev, prev_age + 0.0, q_curr)
            try:
                sol = lp.solve_problem(problem, initial=warm, enumerate_fallback=False)
                return sol
            except (Infeasible, MaxIterations):
                pass
        return lp.solve_problem(problem, enumerate_fallback=config.enumerate_fallback)
    except (Infeasible, MaxIterations) as exc:
        log.debug("local planner failed: %s", exc)
        return None


# --------------------------------------------------------------------------
# scenarios

def wall(x0, y0, x1, y1, radius: float = 0.1) -> tuple[Circle, ...]:
    """Row of touching circles along a segment."""
    length = math.hypot(x1 - x0, y1 - y0)
    n = max(1, int(math.ceil(length / radius)))
    return tuple(Circle((x0 + (x1 - x0) * i / n, y0 + (y1 - y0) * i / n), radius)
                 for i in range(n + 1))


def doorway_obstacles(gap: float = 1.0, wall_x: float = 3.0, half_extent: float = 3.0,
                      radius: float = 0.1, margin: float = 0.05) -> ObstacleSet:
    """A wall at ``x = wall_x`` with a door of free width ``gap`` centred on ``y = 0``."""
    edge = 0.5 * gap + radius
    circles = wall(wall_x, edge, wall_x, half_extent, radius) + \
        wall(wall_x, -half_extent, wall_x, -edge, radius)
    return ObstacleSet(circles, margin)


def doorway_scenario(seed: int = 0, **overrides) -> ScenarioConfig:
    """Human beside the robot with the leash parallel to the wall, door just ahead."""
    cfg = ScenarioConfig(
        obstacles=doorway_obstacles(),
        start=Configuration(2.3, 0.0, math.pi / 2, 0.0, 1.3),
        goal=gp.GoalSpec(5.5, 0.0, 0.0, 0.0),
        rng_seed=seed,
        lattice=gp.LatticeSpec(x_bounds=(0.0, 7.0), y_bounds=(-2.5, 2.5)),
    )
    return replace(cfg, **overrides) if overrides else cfg


def corridor_scenario(length: float = 5.0, seed: int = 0, **overrides) -> ScenarioConfig:
    width = 2.0
    circles = wall(-1.0, width, length + 2.0, width) + wall(-1.0, -width, length + 2.0, -width)
    cfg = ScenarioConfig(
        obstacles=ObstacleSet(circles, 0.05),
        start=Configuration(0.0, 0.0, 0.0, 0.0, 1.3),
        goal=gp.GoalSpec(length, 0.0, 0.0, 0.0),
        rng_seed=seed,
    )
    return replace(cfg, **overrides) if overrides else cfg
