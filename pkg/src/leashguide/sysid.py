"""
Identification of the discount coefficients and of the tension model from logs.

The robot position under the taut model depends only on
``(alpha_x, alpha_y, alpha_theta)``: ``theta`` integrates ``alpha_theta *
omega`` and the position integrates the discounted world velocity. With the
commands held over each sample interval RK4 reduces to Simpson's rule on the
heading, so for a fixed ``alpha_theta`` the predicted position is affine in
``alpha_x`` and ``alpha_y``; the grid search exploits this to score every
candidate without re-running the rollout. ``alpha_phi`` does not move the
robot at all, so among candidates that tie on the robot error it is chosen by
the human-position error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tension as tension_mod
from .dynamics import PAPER_ALPHA, DiscountCoefficients, Variant, _alpha_array, forced_step
from .errors import ConfigError, EmptyData, MissingChannel
from .geometry import (PHI, THETA, Configuration, LeashParams, configuration_from_positions,
                       human_position, leash_projection, wrap_angle)
from .tension import PAPER_MODEL, TensionModel, TensionSample

REQUIRED_COLUMNS = ("t", "x_gt", "y_gt", "xh_gt", "yh_gt", "vbx", "vby", "omega")
OPTIONAL_COLUMNS = ("theta", "force")
TIE_RTOL = 1e-9


@dataclass
class TrajectoryLog:
    timestamps: np.ndarray          # (n,)
    robot_gt: np.ndarray            # (n, 2)
    human_gt: np.ndarray            # (n, 2)
    inputs: np.ndarray              # (n, 3); row k is held over [t_k, t_{k+1})
    initial_config: Configuration
    theta: np.ndarray | None = None # (n,) optional heading channel
    force: np.ndarray | None = None # (n,) optional tension channel
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        n = self.timestamps.size
        self.robot_gt = np.asarray(self.robot_gt, dtype=float).reshape(n, 2)
        self.human_gt = np.asarray(self.human_gt, dtype=float).reshape(n, 2)
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(n, 3)
        if self.theta is not None:
            self.theta = np.asarray(self.theta, dtype=float).reshape(n)
        if self.force is not None:
            self.force = np.asarray(self.force, dtype=float).reshape(n)
        self.initial_config = Configuration(*(float(v) for v in self.initial_config))
        if n < 2:
            raise ValueError("a trajectory log needs at least two samples")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return self.timestamps.size

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.timestamps)


@dataclass(frozen=True)
class IdentificationResult:
    alpha: DiscountCoefficients
    robot_rmse: float
    human_rmse: float
    objective: float  # mean squared robot-position error


# --------------------------------------------------------------------------
# prediction

def predict_trajectory(log: TrajectoryLog, alpha=PAPER_ALPHA) -> list[Configuration]:
    """Taut (paper-model) rollout from the log's initial configuration."""
    q = np.asarray(log.initial_config, dtype=float)
    params = LeashParams(l0=float(q[4]))
    out = [Configuration.from_array(q)]
    for u, dt in zip(log.inputs[:-1], log.dts):
        q = forced_step(q, u, True, dt, alpha, params, Variant.PAPER, integrator="rk4")
        out.append(Configuration.from_array(q))
    return out


def _world_increments(log: TrajectoryLog, a_theta: np.ndarray):
    """Per-step undiscounted displacement integrals for each ``alpha_theta``.

    Returns cumulative ``(Ix, Iy)`` of shape ``(len(a_theta), n)`` such that
    the predicted robot position is ``x0 + alpha_x * Ix``.
    """
    u = log.inputs[:-1]
    dt = log.dts
    a = np.asarray(a_theta, dtype=float)[:, None]
    dth = a * u[:, 2] * dt                         # (A, n-1)
    th0 = log.initial_config.theta + np.concatenate(
        [np.zeros((a.shape[0], 1)), np.cumsum(dth, axis=1)[:, :-1]], axis=1)

    def vw(th):
        c, s = np.cos(th), np.sin(th)
        return c * u[:, 0] - s * u[:, 1], s * u[:, 0] + c * u[:, 1]

    x1, y1 = vw(th0)
    x2, y2 = vw(th0 + 0.5 * dth)
    x3, y3 = vw(th0 + dth)
    ix = dt / 6.0 * (x1 + 4.0 * x2 + x3)
    iy = dt / 6.0 * (y1 + 4.0 * y2 + y3)
    zero = np.zeros((a.shape[0], 1))
    return (np.concatenate([zero, np.cumsum(ix, axis=1)], axis=1),
            np.concatenate([zero, np.cumsum(iy, axis=1)], axis=1))


def _grid(step: float) -> np.ndarray:
    n = int(math.floor(1.0 / step + 1e-9))
    return np.round(np.arange(n + 1) * step, 12)


def _robot_sse(logs, grid):
    """Sum of squared robot errors, shape (G_x, G_y, G_theta), and the sample count."""
    g = grid.size
    sse = np.zeros((g, g, g))
    count = 0
    for log in logs:
        ix, iy = _world_increments(log, grid)          # (G_theta, n)
        ex = log.robot_gt[:, 0] - log.initial_config.x  # target for alpha_x * ix
        ey = log.robot_gt[:, 1] - log.initial_config.y
        # sum_k (a ix_k - e_k)^2 = a^2 Sxx - 2 a Sxe + See
        sxx, sxe, see = (ix * ix).sum(1), (ix * ex).sum(1), ex @ ex
        syy, sye, sey = (iy * iy).sum(1), (iy * ey).sum(1), ey @ ey
        a = grid[:, None]
        errx = a * a * sxx[None] - 2.0 * a * sxe[None] + see       # (G_x, G_theta)
        erry = a * a * syy[None] - 2.0 * a * sye[None] + sey       # (G_y, G_theta)
        sse += errx[:, None, :] + erry[None, :, :]
        count += len(log)
    return np.maximum(sse, 0.0), count


def _human_sse(logs, alpha_rows: np.ndarray):
    """Human squared error summed over logs for a batch of alpha rows (B, 4)."""
    alpha_rows = np.atleast_2d(alpha_rows)
    total = np.zeros(alpha_rows.shape[0])
    for log in logs:
        params = LeashParams(l0=log.initial_config.l)
        q = np.tile(np.asarray(log.initial_config, dtype=float), (alpha_rows.shape[0], 1))
        err = np.sum((human_position(q) - log.human_gt[0]) ** 2, axis=-1)
        for u, dt, hk in zip(log.inputs[:-1], log.dts, log.human_gt[1:]):
            q = forced_step(q, u, True, dt, alpha_rows, params, Variant.PAPER, integrator="rk4")
            err += np.sum((human_position(q) - hk) ** 2, axis=-1)
        total += err
    return total


def _objective_robot(logs, alpha) -> float:
    a = _alpha_array(alpha)
    total, count = 0.0, 0
    for log in logs:
        ix, iy = _world_increments(log, np.array([a[2]]))
        px = log.initial_config.x + a[0] * ix[0]
        py = log.initial_config.y + a[1] * iy[0]
        total += float(np.sum((px - log.robot_gt[:, 0]) ** 2 + (py - log.robot_gt[:, 1]) ** 2))
        count += len(log)
    return total / count


def identify_alpha(logs: Sequence[TrajectoryLog], grid_step: float = 0.05,
                   refine: bool = False) -> IdentificationResult:
    """Exhaustive grid search over ``[0, 1]^4`` minimizing the robot MSE.

    Robot-error ties are broken first by the human-position error (the only
    signal that depends on ``alpha_phi``) and then lexicographically.
    ``refine`` adds one coordinate-descent pass at ``grid_step / 5``.
    """
    logs = list(logs)
    if not logs:
        raise EmptyData("identify_alpha needs at least one log")
    if not 0 < grid_step <= 0.5:
        raise ValueError("grid_step must lie in (0, 0.5]")
    grid = _grid(grid_step)
    sse, count = _robot_sse(logs, grid)
    mse = sse / count
    best = mse.min()
    tied = np.argwhere(mse <= best * (1 + TIE_RTOL) + 1e-300)  # lexicographic order
    cand = []
    for ix, iy, it in tied:
        for ip in range(grid.size):
            cand.append((grid[ix], grid[iy], grid[it], grid[ip]))
    cand = np.array(cand)
    hs = _human_sse(logs, cand)
    hbest = hs.min()
    pick = int(np.flatnonzero(hs <= hbest * (1 + TIE_RTOL) + 1e-300)[0])
    alpha = cand[pick]

    if refine:
        alpha = _refine(logs, alpha, grid_step / 5.0)

    alpha = DiscountCoefficients.from_sequence(np.clip(alpha, 0.0, 1.0))
    robot = _objective_robot(logs, alpha)
    human = float(_human_sse(logs, alpha.as_array())[0]) / count
    return IdentificationResult(alpha, math.sqrt(robot), math.sqrt(human), robot)


def _refine(logs, alpha, step):
    alpha = np.array(alpha, dtype=float)
    offsets = np.arange(-4, 5) * step
    for i in range(3):
        trial = np.tile(alpha, (offsets.size, 1))
        trial[:, i] = np.clip(alpha[i] + offsets, 0.0, 1.0)
        scores = [_objective_robot(logs, t) for t in trial]
        alpha = trial[int(np.argmin(scores))]
    trial = np.tile(alpha, (offsets.size, 1))
    trial[:, 3] = np.clip(alpha[3] + offsets, 0.0, 1.0)
    alpha = trial[int(np.argmin(_human_sse(logs, trial)))]
    return alpha


# --------------------------------------------------------------------------
# tension

def headings(log: TrajectoryLog) -> np.ndarray:
    """Logged heading, or the undiscounted integral of the logged yaw rate."""
    if log.theta is not None:
        return log.theta
    inc = log.inputs[:-1, 2] * log.dts
    return wrap_angle(log.initial_config.theta + np.concatenate([[0.0], np.cumsum(inc)]))


def tension_samples(log: TrajectoryLog) -> list[TensionSample]:
    if log.force is None or log.force.size == 0:
        raise MissingChannel(f"log {log.name or '<unnamed>'} has no force channel")
    th = headings(log)
    d = log.robot_gt - log.human_gt
    phi = wrap_angle(th - np.arctan2(d[:, 1], d[:, 0]))
    p, _ = leash_projection(phi, log.inputs)
    return [TensionSample(float(a), float(b)) for a, b in zip(p, log.force)]


def fit_tension_from_logs(logs: Sequence[TrajectoryLog]) -> TensionModel:
    logs = list(logs)
    if not logs:
        raise EmptyData("fit_tension_from_logs needs at least one log")
    samples = [s for log in logs for s in tension_samples(log)]
    return tension_mod.fit(samples)


# --------------------------------------------------------------------------
# synthetic data

def synthetic_log(alpha=PAPER_ALPHA, rng: np.random.Generator | None = None, n: int = 201,
                  dt: float = 0.05, q0=(0.0, 0.0, 0.0, 0.0, 1.3), hold: float = 0.5,
                  position_noise: float = 0.0, tension: TensionModel | None = None,
                  force_noise: float | None = None) -> TrajectoryLog:
    """Taut-throughout log from random piecewise-constant commands.

    With ``tension`` given a force channel ``beta1 * v_proj + beta2`` plus
    Gaussian noise (std ``force_noise``, default the model's sigma) is added.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    per = max(1, int(round(hold / dt)))
    segs = -(-n // per)
    seg = np.column_stack([rng.uniform(0.1, 0.5, segs), rng.uniform(-0.3, 0.3, segs),
                           rng.uniform(-0.6, 0.6, segs)])
    inputs = np.repeat(seg, per, axis=0)[:n]
    t = np.arange(n) * dt
    q = np.asarray(q0, dtype=float)
    params = LeashParams(l0=float(q[4]))
    qs = [q]
    for u in inputs[:-1]:
        q = forced_step(q, u, True, dt, alpha, params, Variant.PAPER, integrator="rk4")
        qs.append(q)
    qs = np.array(qs)
    robot = qs[:, :2].copy()
    human = human_position(qs)
    if position_noise > 0:
        robot += rng.normal(0.0, position_noise, robot.shape)
        human += rng.normal(0.0, position_noise, human.shape)
    force = None
    if tension is not None:
        p, _ = leash_projection(qs[:, PHI], inputs)
        sd = tension.sigma if force_noise is None else force_noise
        force = tension.predict_proj(p) + rng.normal(0.0, sd, n)
    return TrajectoryLog(t, robot, human, inputs, Configuration.from_array(qs[0]),
                         theta=qs[:, THETA], force=force)


# --------------------------------------------------------------------------
# CSV

def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(path: str | Path, log: TrajectoryLog) -> None:
    cols = list(REQUIRED_COLUMNS)
    if log.theta is not None:
        cols.append("theta")
    if log.force is not None:
        cols.append("force")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(log)):
            row = [log.timestamps[k], *log.robot_gt[k], *log.human_gt[k], *log.inputs[k]]
            if log.theta is not None:
                row.append(log.theta[k])
            if log.force is not None:
                row.append(log.force[k])
            w.writerow([_fmt(v) for v in row])


def read_trajectory_csv(path: str | Path) -> TrajectoryLog:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing column(s) {', '.join(missing)}")
    unknown = [c for c in header if c not in REQUIRED_COLUMNS + OPTIONAL_COLUMNS]
    if unknown:
        raise ConfigError(f"{path}: unknown column(s) {', '.join(unknown)}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: non-numeric field") from None
    if len(data) < 2:
        raise ConfigError(f"{path}: a trajectory log needs at least two samples")
    a = np.array(data)
    col = {h: a[:, i] for i, h in enumerate(header)}
    robot = np.column_stack([col["x_gt"], col["y_gt"]])
    human = np.column_stack([col["xh_gt"], col["yh_gt"]])
    theta = col.get("theta")
    th0 = float(theta[0]) if theta is not None else 0.0
    q0 = configuration_from_positions(robot[0], human[0], th0)
    try:
        return TrajectoryLog(col["t"], robot, human,
                             np.column_stack([col["vbx"], col["vby"], col["omega"]]), q0,
                             theta=theta, force=col.get("force"), name=path.name)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def read_log_dir(path: str | Path) -> list[TrajectoryLog]:
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"{path}: not a directory")
    files = sorted(path.glob("*.csv"))
    if not files:
        raise EmptyData(f"{path}: no .csv logs found")
    return [read_trajectory_csv(f) for f in files]
