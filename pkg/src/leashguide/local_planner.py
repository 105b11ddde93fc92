"""
Mixed-integer direct-collocation local planner.

States ``q_0..q_N``, inputs ``u_0..u_{N-1}``, tensions ``F_0..F_N`` and the
free final time ``t`` are decision variables; ``Delta t = t / N`` and the
dynamics are forward-Euler steps of the taut (``s_k = 1``) or slack
(``s_k = 0``) mode. The binary schedule is handled outside the NLP: with the
schedule fixed the problem is smooth and goes to the augmented-Lagrangian
solver; the schedule is then recomputed from the guards until it is a fixed
point, and if that fails every schedule with at most two switches is tried.

Mode consistency is encoded as ordinary constraints of the fixed-schedule NLP:

* taut step: ``v_body . e_l >= eps``, ``F_k >= F_bar``, ``l_k = l0``;
* slack step: ``F_k <= F_bar - eps`` and the step must not stretch the leash
  past ``l0`` (``l_k + dt v.e_l <= l0``).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nlp
from .dynamics import PAPER_ALPHA, DiscountCoefficients, Variant, forced_step, guard_to_taut, mode_rates
from .errors import Infeasible, MaxIterations
from .geometry import L, PHI, THETA, LeashParams, human_position, leash_projection, wrap_angle
from .obstacles import ObstacleSet, clearances
from .tension import PAPER_MODEL, TensionModel

log = logging.getLogger(__name__)

EPS_P = 1e-3        # m/s, strict leash-opening speed of a taut step
EPS_F = 1e-3        # N, strict slack tension below the threshold
ABS_EPS = 1e-4      # m/s, smoothing of |e_l x v| inside the NLP
CLEAR_BUFFER = 1e-3 # m, absorbs the smoothing when states are re-simulated exactly
FIXED_POINT_ITERS = 5
MAX_SWITCHES = 2

TOL_DYN = 1e-4
TOL_BOX = 1e-6
TOL_CLEAR = 1e-4
TOL_FORCE = 1e-3
TOL_LEASH = 1e-4


@dataclass(frozen=True)
class PlannerWeights:
    q_target: tuple = (10.0, 10.0, 1.0, 1.0, 1.0)
    q_u: tuple = (1.0, 1.0, 0.1)
    s_t: float = 0.1
    s_f: float = 0.01
    s_l: float = 0.5
    s_df: float = 0.01
    squared_df: bool = False

    def __post_init__(self):
        if len(self.q_target) != 5 or len(self.q_u) != 3:
            raise ValueError("q_target needs 5 weights and q_u 3")
        if min(self.q_target) <= 0 or min(self.q_u) <= 0:
            raise ValueError("q_target and q_u weights must be positive")
        if min(self.s_t, self.s_f, self.s_l, self.s_df) < 0:
            raise ValueError("scalar weights must be nonnegative")

    def scaled(self, c: float) -> "PlannerWeights":
        return PlannerWeights(tuple(c * w for w in self.q_target), tuple(c * w for w in self.q_u),
                              c * self.s_t, c * self.s_f, c * self.s_l, c * self.s_df,
                              self.squared_df)


_INF = float("inf")


@dataclass(frozen=True)
class PlannerBounds:
    q_lower: tuple = (-_INF, -_INF, -_INF, -_INF, 0.5)
    q_upper: tuple = (_INF, _INF, _INF, _INF, _INF)
    u_lower: tuple = (-0.5, -0.5, -1.0)
    u_upper: tuple = (0.5, 0.5, 1.0)
    t_min: float = 1.0
    t_max: float = 6.0
    n: int = 10

    def __post_init__(self):
        if np.any(np.asarray(self.q_lower) > np.asarray(self.q_upper)) or np.any(
                np.asarray(self.u_lower) > np.asarray(self.u_upper)):
            raise ValueError("lower bounds must not exceed upper bounds")
        if self.n < 2:
            raise ValueError("horizon must have at least two steps")
        if not 0 < self.t_min <= self.t_max:
            raise ValueError("need 0 < t_min <= t_max")


@dataclass(frozen=True)
class LocalProblem:
    q_curr: np.ndarray
    q_target: np.ndarray
    obstacles: ObstacleSet = ObstacleSet()
    weights: PlannerWeights = PlannerWeights()
    bounds: PlannerBounds = PlannerBounds()
    tension: TensionModel = PAPER_MODEL
    alpha: DiscountCoefficients = PAPER_ALPHA
    params: LeashParams = LeashParams()
    variant: Variant = Variant.PAPER

    def __post_init__(self):
        object.__setattr__(self, "q_curr", np.asarray(self.q_curr, dtype=float).reshape(5))
        object.__setattr__(self, "q_target", np.asarray(self.q_target, dtype=float).reshape(5))
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def n(self) -> int:
        return self.bounds.n


@dataclass
class CollocationSolution:
    states: np.ndarray       # (N+1, 5)
    inputs: np.ndarray       # (N, 3)
    forces: np.ndarray       # (N+1,)
    modes: np.ndarray        # (N,) of 0/1
    t_final: float
    cost: float
    kkt_residual: float
    certified: bool = False
    converged: bool = False
    multipliers: nlp.Multipliers | None = field(default=None, repr=False)
    merit_history: list = field(default_factory=list, repr=False)
    inner_merits: list = field(default_factory=list, repr=False)
    iterations: int = 0

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dt(self) -> float:
        return self.t_final / self.n


# --------------------------------------------------------------------------
# model pieces

def discrete_step(q, u, s: int, dt: float, alpha=PAPER_ALPHA, params: LeashParams = LeashParams(),
                  variant: Variant = Variant.PAPER) -> np.ndarray:
    """Forward-Euler step of the taut (``s = 1``) or slack (``s = 0``) mode."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return forced_step(q, u, bool(s), dt, alpha, params, variant, integrator="euler")


def mode_from_guards(q, u, force, params: LeashParams) -> int:
    return int(guard_to_taut(q, u, force, params))


def _stage_force_terms(forces, w: PlannerWeights):
    f = np.asarray(forces, dtype=float)
    df = np.diff(f)
    return w.s_f * f[:-1].sum() + w.s_df * ((df @ df) if w.squared_df else df.sum())


def evaluate_cost(solution: CollocationSolution, weights: PlannerWeights, q_target,
                  params: LeashParams = LeashParams()) -> float:
    q = np.asarray(solution.states, dtype=float)
    u = np.asarray(solution.inputs, dtype=float)
    d = q[-1] - np.asarray(q_target, dtype=float)
    d[2:4] = wrap_angle(d[2:4])
    terminal = float(np.asarray(weights.q_target) @ (d * d)) + weights.s_t * solution.t_final
    inputs = float(np.sum(np.asarray(weights.q_u) * u * u))
    leash = weights.s_l * float(np.sum(params.l0 - q[:-1, L]))
    return terminal + inputs + leash + float(_stage_force_terms(solution.forces, weights))


def force_interval(problem: LocalProblem, states, inputs, forced_modes):
    """Admissible tension interval at every knot for a given schedule."""
    n = problem.n
    idx = np.minimum(np.arange(n + 1), n - 1)
    phi = np.asarray(states)[:, PHI]
    p, _ = leash_projection(phi, np.asarray(inputs)[idx])
    pred = problem.tension.predict_proj(p)
    sig = problem.tension.sigma
    fbar = problem.params.f_bar
    fm = np.append(np.asarray(forced_modes, dtype=bool), bool(forced_modes[-1]))
    lo = np.where(fm, np.maximum(pred - sig, 0.0), 0.0)
    lo[:n] = np.where(fm[:n], np.maximum(lo[:n], fbar), lo[:n])
    hi = np.where(fm, pred + sig, fbar - EPS_F)
    return lo, hi


# --------------------------------------------------------------------------
# fixed-schedule NLP

class _Evaluation:
    __slots__ = ("cost", "cost_grad", "h", "g", "_vjp", "_jac", "_hess", "_chess")

    def __init__(self, cost, cost_grad, h, g, vjp, jac, hess, chess=None):
        self.cost, self.cost_grad, self.h, self.g = cost, cost_grad, h, g
        self._vjp, self._jac, self._hess, self._chess = vjp, jac, hess, chess

    def constraint_hessian(self, wh, wg):
        """Curvature of ``wh.h`` from the smoothed ``|e_l x v|`` term (zero otherwise)."""
        if self._chess is None:
            return None
        return self._chess(wh, wg)

    def vjp(self, wh, wg):
        return self._vjp(wh, wg)

    def jacobian(self):
        """Dense ``(dh/dx, dg/dx)``."""
        return self._jac()

    def cost_hessian(self):
        return self._hess()


class FixedScheduleNLP:
    """The collocation NLP for one mode schedule, in ``nlp.Problem`` form."""

    def __init__(self, problem: LocalProblem, modes):
        self.problem = problem
        n = problem.n
        self.N = n
        self.modes = np.asarray(modes, dtype=bool).reshape(n)
        self.fmodes = np.append(self.modes, self.modes[-1])
        b = problem.bounds
        reach = np.hypot(max(abs(b.u_lower[0]), abs(b.u_upper[0])),
                         max(abs(b.u_lower[1]), abs(b.u_upper[1]))) * b.t_max
        self.obstacles = problem.obstacles.near(problem.q_curr[:2],
                                                reach + problem.params.l0 + 1.0)
        self.nq, self.nu, self.nf = 5 * (n + 1), 3 * n, n + 1
        self.size = self.nq + self.nu + self.nf + 1
        self._uidx = np.minimum(np.arange(n + 1), n - 1)
        self._eye = np.eye(5)
        obs = self.obstacles
        self._oc, self._or, self._ov = obs.centers, obs.radii, obs.velocities
        d = obs.safety_margin + CLEAR_BUFFER
        self._dr = d + problem.params.robot_radius + self._or
        self._dh = d + problem.params.human_radius + self._or
        self._kt = np.arange(1, n + 1) / n   # obstacle time factor k/N
        self.fs = max(abs(problem.tension.beta1), 1.0)
        self._fcols = slice(self.nq + self.nu, self.nq + self.nu + self.nf)

    # layout ---------------------------------------------------------------
    # Forces are stored in units of ``fs`` newtons and the force rows of g are
    # divided by ``fs``, so that the tension band (slope beta1 in v.e_l) has
    # O(1) gradients like every other row.
    def unpack(self, x):
        n, nq, nu = self.N, self.nq, self.nu
        return (x[:nq].reshape(n + 1, 5), x[nq:nq + nu].reshape(n, 3),
                self.fs * x[nq + nu:nq + nu + self.nf], x[-1])

    def pack(self, states, inputs, forces, t) -> np.ndarray:
        return np.concatenate([np.asarray(states, float).ravel(), np.asarray(inputs, float).ravel(),
                               np.asarray(forces, float).ravel() / self.fs, [float(t)]])

    def box(self):
        p = self.problem
        b = p.bounds
        n = self.N
        ql = np.tile(np.asarray(b.q_lower, float), (n + 1, 1))
        qu = np.tile(np.asarray(b.q_upper, float), (n + 1, 1))
        qu[:, L] = np.minimum(qu[:, L], p.params.l0)
        ql[0] = qu[0] = p.q_curr
        lower = self.pack(ql, np.tile(b.u_lower, (n, 1)), np.zeros(n + 1), b.t_min)
        upper = self.pack(qu, np.tile(b.u_upper, (n, 1)), np.full(n + 1, np.inf), b.t_max)
        return lower, upper

    # evaluation -----------------------------------------------------------
    def evaluate(self, x) -> _Evaluation:
        p = self.problem
        w = p.weights
        n = self.N
        l0 = p.params.l0
        fbar = p.params.f_bar
        tm = p.tension
        Q, U, F, t = self.unpack(np.asarray(x, dtype=float))
        dt = t / n
        modes = self.modes
        fmodes = self.fmodes

        # cost
        d = Q[n] - p.q_target
        d[2:4] = wrap_angle(d[2:4])
        wt = np.asarray(w.q_target)
        wu = np.asarray(w.q_u)
        dF = np.diff(F)
        cost = (wt @ (d * d) + w.s_t * t + np.sum(wu * U * U) + w.s_f * F[:n].sum()
                + w.s_l * np.sum(l0 - Q[:n, L])
                + w.s_df * ((dF @ dF) if w.squared_df else dF.sum()))
        gQ = np.zeros((n + 1, 5))
        gU = 2.0 * wu * U
        gF = np.zeros(n + 1)
        gQ[n] = 2.0 * wt * d
        gQ[:n, L] -= w.s_l
        gF[:n] += w.s_f
        if w.squared_df:
            gF[1:] += 2.0 * w.s_df * dF
            gF[:-1] -= 2.0 * w.s_df * dF
        else:
            gF[0] -= w.s_df
            gF[n] += w.s_df
        fsc = self.fs
        fcols = self._fcols
        cost_grad = self.pack(gQ, gU, gF * fsc * fsc, w.s_t)

        # dynamics defects
        xk = Q[:n]
        ft, fqt, fut = mode_rates(xk, U, True, p.alpha, p.variant, l0, jacobian=True,
                                  abs_eps=ABS_EPS)
        f_s, fqs, fus = mode_rates(xk, U, False, p.alpha, p.variant, l0, jacobian=True,
                                   abs_eps=ABS_EPS)
        m1 = modes[:, None]
        f = np.where(m1, ft, f_s)
        fq = np.where(m1[..., None], fqt, fqs)
        fu = np.where(m1[..., None], fut, fus)
        pred = xk + dt * f
        clamp = ~modes & (pred[:, L] > l0)
        pinned = modes | clamp
        pred[pinned, L] = l0
        h = Q[1:] - pred
        h[:, 2:4] = wrap_angle(h[:, 2:4])
        M = self._eye + dt * fq
        B = dt * fu
        T = f / n
        M[pinned, L, :] = 0.0
        B[pinned, L, :] = 0.0
        T[pinned, L] = 0.0

        # projected leash speed at every force knot
        uF = U[self._uidx]
        phiF = Q[:, PHI]
        cphi, sphi = np.cos(phiF), np.sin(phiF)
        pF = uF[:, 0] * cphi - uF[:, 1] * sphi
        cF = uF[:, 0] * sphi + uF[:, 1] * cphi
        fpred = tm.beta1 * pF + tm.beta2

        taut_k = modes
        slack_k = ~modes
        blocks = [
            (EPS_P - pF[:n], taut_k),                  # A
            (fbar - F[:n], taut_k),                    # B
            (fpred - tm.sigma - F, fmodes),            # C1
            (F - fpred - tm.sigma, fmodes),            # C2
            (l0 - Q[:n, L], taut_k),                   # D
            (F - (fbar - EPS_F), ~fmodes),             # E
            (Q[:n, L] + dt * pF[:n] - l0, slack_k),    # G
        ]

        # obstacle clearances at knots 1..N
        nobs = self._or.size
        if nobs:
            X = Q[1:, :2]
            psi = Q[1:, THETA] - Q[1:, PHI]
            e = np.stack([np.cos(psi), np.sin(psi)], axis=-1)
            ep = np.stack([-e[:, 1], e[:, 0]], axis=-1)
            lk = Q[1:, L]
            H = X - lk[:, None] * e
            O = self._oc[None] + (t * self._kt)[:, None, None] * self._ov[None]
            rr = X[:, None, :] - O
            dr = np.hypot(rr[..., 0], rr[..., 1])
            nr = rr / np.maximum(dr, 1e-12)[..., None]
            hh = H[:, None, :] - O
            dh = np.hypot(hh[..., 0], hh[..., 1])
            nh = hh / np.maximum(dh, 1e-12)[..., None]
            ones = np.ones((n, nobs), dtype=bool)
            blocks.append(((self._dr - dr).ravel(), ones.ravel()))     # R
            blocks.append(((self._dh - dh).ravel(), ones.ravel()))     # H
        scales = [1.0, 1.0 / fsc, 1.0 / fsc, 1.0 / fsc, 1.0, 1.0 / fsc, 1.0] + [1.0] * (len(blocks) - 7)
        g = np.concatenate([v[msk] * sc for (v, msk), sc in zip(blocks, scales)])
        sizes = [int(msk.sum()) for _, msk in blocks]
        masks = [msk for _, msk in blocks]
        beta1 = tm.beta1
        uidx = self._uidx
        kt = self._kt
        ov = self._ov

        def vjp(wh, wg):
            wh = wh.reshape(n, 5)
            gq = np.zeros((n + 1, 5))
            gu = np.zeros((n, 3))
            gf = np.zeros(n + 1)
            gq[1:] += wh
            gq[:n] -= np.einsum("kij,ki->kj", M, wh)
            gu -= np.einsum("kij,ki->kj", B, wh)
            gt = -float(np.sum(T * wh))

            full = []
            off = 0
            for msk, sz, sc in zip(masks, sizes, scales):
                arr = np.zeros(msk.shape)
                arr[msk] = wg[off:off + sz] * sc
                full.append(arr)
                off += sz
            wA, wB, wC1, wC2, wD, wE, wG = full[:7]
            wp = beta1 * (wC1 - wC2)
            wp[:n] += -wA + dt * wG
            gf += -wC1 + wC2 + wE
            gf[:n] -= wB
            gq[:n, L] += -wD + wG
            gt += float(wG @ pF[:n]) / n
            gq[:, PHI] += wp * (-cF)
            np.add.at(gu[:, 0], uidx, wp * cphi)
            np.add.at(gu[:, 1], uidx, -wp * sphi)
            if nobs:
                wR = full[7].reshape(n, nobs)
                wH = full[8].reshape(n, nobs)
                sr = np.einsum("kj,kjc->kc", wR, nr)
                gq[1:, :2] -= sr
                gt += float(np.sum(wR * np.einsum("kjc,jc->kj", nr, ov) * kt[:, None]))
                sh = np.einsum("kj,kjc->kc", wH, nh)
                gq[1:, :2] -= sh
                proj_ep = np.sum(sh * ep, axis=-1)
                gq[1:, THETA] += lk * proj_ep
                gq[1:, PHI] -= lk * proj_ep
                gq[1:, L] += np.sum(sh * e, axis=-1)
                gt += float(np.sum(wH * np.einsum("kjc,jc->kj", nh, ov) * kt[:, None]))
            return self.pack(gq, gu, gf * fsc * fsc, gt)

        nx = self.size
        nq, nu = self.nq, self.nu

        def jac():
            kk = np.arange(n)
            ri = np.arange(5)
            jh = np.zeros((n, 5, nx))
            jh[kk[:, None], ri, 5 * (kk[:, None] + 1) + ri] = 1.0
            jh[kk[:, None, None], ri[None, :, None], 5 * kk[:, None, None] + ri[None, None, :]] -= M
            jh[kk[:, None, None], ri[None, :, None], nq + 3 * kk[:, None, None] + np.arange(3)] = -B
            jh[:, :, -1] = -T
            knots = np.arange(n + 1)
            dp = np.zeros((n + 1, nx))
            dp[knots, 5 * knots + PHI] = -cF
            dp[knots, nq + 3 * uidx] = cphi
            dp[knots, nq + 3 * uidx + 1] = -sphi
            ef = np.zeros((n + 1, nx))
            ef[knots, nq + nu + knots] = 1.0
            el = np.zeros((n, nx))
            el[kk, 5 * kk + L] = 1.0
            jG = el + dt * dp[:n]
            jG[:, -1] += pF[:n] / n
            rows = [-dp[:n], -ef[:n], beta1 * dp - ef, ef - beta1 * dp, -el, ef, jG]
            if nobs:
                kq = 5 * (kk + 1)
                jr = np.zeros((n, nobs, nx))
                jr[kk[:, None], np.arange(nobs), kq[:, None]] = -nr[..., 0]
                jr[kk[:, None], np.arange(nobs), kq[:, None] + 1] = -nr[..., 1]
                jr[:, :, -1] = np.einsum("kjc,jc->kj", nr, ov) * kt[:, None]
                jhm = np.zeros((n, nobs, nx))
                jj = np.arange(nobs)
                jhm[kk[:, None], jj, kq[:, None]] = -nh[..., 0]
                jhm[kk[:, None], jj, kq[:, None] + 1] = -nh[..., 1]
                pe = np.einsum("kjc,kc->kj", nh, ep)
                jhm[kk[:, None], jj, kq[:, None] + THETA] = lk[:, None] * pe
                jhm[kk[:, None], jj, kq[:, None] + PHI] = -lk[:, None] * pe
                jhm[kk[:, None], jj, kq[:, None] + L] = np.einsum("kjc,kc->kj", nh, e)
                jhm[:, :, -1] = np.einsum("kjc,jc->kj", nh, ov) * kt[:, None]
                rows += [jr.reshape(-1, nx), jhm.reshape(-1, nx)]
            jg = np.concatenate([r[msk] * sc for r, msk, sc in zip(rows, masks, scales)], axis=0)
            jg[:, fcols] *= fsc
            return jh.reshape(5 * n, nx), jg

        def hess():
            hm = np.zeros((nx, nx))
            di = np.arange(nx)
            diag = np.zeros(nx)
            diag[5 * n:5 * n + 5] = 2.0 * wt
            diag[nq:nq + nu] = np.tile(2.0 * wu, n)
            hm[di, di] = diag
            if w.squared_df:
                f0 = nq + nu
                dmat = np.diff(np.eye(n + 1), axis=0)
                hm[f0:f0 + n + 1, f0:f0 + n + 1] += 2.0 * w.s_df * fsc * fsc * (dmat.T @ dmat)
            return hm

        chess = None
        if p.variant is Variant.PAPER:
            a_phi = np.where(modes, p.alpha.as_array()[3], 1.0)
            ck = cF[:n]
            root = np.sqrt(ck * ck + ABS_EPS * ABS_EPS)
            a1 = ck / root
            a2 = ABS_EPS * ABS_EPS / root**3
            # gradient and Hessian of c wrt (phi_k, vx_k, vy_k)
            dc = np.stack([pF[:n], sphi[:n], cphi[:n]], axis=-1)
            d2c = np.zeros((n, 3, 3))
            d2c[:, 0, 0] = -ck
            d2c[:, 0, 1] = d2c[:, 1, 0] = cphi[:n]
            d2c[:, 0, 2] = d2c[:, 2, 0] = -sphi[:n]
            coef = a_phi / l0
            habs = a2[:, None, None] * dc[:, :, None] * dc[:, None, :] + a1[:, None, None] * d2c
            kk = np.arange(n)
            idx3 = np.stack([5 * kk + PHI, nq + 3 * kk, nq + 3 * kk + 1], axis=-1)

            def chess(wh, wg):
                wphi = wh.reshape(n, 5)[:, PHI]
                hm = np.zeros((nx, nx))
                blk = (wphi * coef * dt)[:, None, None] * habs
                hm[idx3[:, :, None], idx3[:, None, :]] += blk
                cross = (wphi * coef / n)[:, None] * a1[:, None] * dc
                hm[idx3, -1] += cross
                hm[-1, idx3] += cross
                return hm

        return _Evaluation(float(cost), cost_grad, h.ravel(), g, vjp, jac, hess, chess)


def merit_gradient(nlp_problem: FixedScheduleNLP, x, multipliers: nlp.Multipliers):
    """Augmented-Lagrangian merit value and its analytic gradient at ``x``."""
    return nlp.merit(nlp_problem.evaluate(np.asarray(x, dtype=float)), multipliers)


def gradient(nlp_problem: FixedScheduleNLP, x, multipliers: nlp.Multipliers) -> np.ndarray:
    return merit_gradient(nlp_problem, x, multipliers)[1]


# --------------------------------------------------------------------------
# residuals and certification

@dataclass
class Residuals:
    """Constraint residuals; equalities should be 0, inequalities <= 0."""

    initial: np.ndarray
    dynamics: np.ndarray
    force: np.ndarray
    leash: np.ndarray
    state_box: np.ndarray
    input_box: np.ndarray
    time_box: np.ndarray
    robot_clearance: np.ndarray
    human_clearance: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, k)) for k in self.__dataclass_fields__])

    def worst(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = np.ravel(getattr(self, k))
            if k in ("initial", "dynamics"):
                out[k] = float(np.max(np.abs(v), initial=0.0))
            else:
                out[k] = float(np.max(v, initial=-np.inf))
        return out

    def satisfied(self) -> bool:
        w = self.worst()
        return (w["initial"] <= TOL_BOX and w["dynamics"] <= TOL_DYN
                and w["force"] <= TOL_FORCE and w["leash"] <= TOL_LEASH
                and max(w["state_box"], w["input_box"], w["time_box"]) <= TOL_BOX
                and max(w["robot_clearance"], w["human_clearance"]) <= TOL_CLEAR)


def constraint_residuals(solution: CollocationSolution, problem: LocalProblem) -> Residuals:
    """Residuals of every constraint, computed directly from the model."""
    n = problem.n
    prm = problem.params
    b = problem.bounds
    q = np.asarray(solution.states, dtype=float)
    u = np.asarray(solution.inputs, dtype=float)
    F = np.asarray(solution.forces, dtype=float)
    s = np.asarray(solution.modes, dtype=int)
    dt = solution.t_final / n

    d0 = q[0] - problem.q_curr
    d0[2:4] = wrap_angle(d0[2:4])
    dyn = np.empty((n, 5))
    for k in range(n):
        r = q[k + 1] - discrete_step(q[k], u[k], s[k], dt, problem.alpha, prm, problem.variant)
        r[2:4] = wrap_angle(r[2:4])
        dyn[k] = r

    fm = np.append(s, s[-1]).astype(bool)
    idx = np.minimum(np.arange(n + 1), n - 1)
    p, _ = leash_projection(q[:, PHI], u[idx])
    pred = problem.tension.predict_proj(p)
    sig = problem.tension.sigma
    force = np.where(fm[:, None],
                     np.stack([pred - sig - F, F - pred - sig], axis=-1),
                     np.stack([-F, F - prm.f_bar], axis=-1))
    leash = np.where(s == 1, prm.l0 - q[:n, L], q[:n, L] + dt * p[:n] - prm.l0)

    qu = np.asarray(b.q_upper, float).copy()
    qu[L] = min(qu[L], prm.l0)
    state_box = np.concatenate([np.asarray(b.q_lower) - q[1:], q[1:] - qu], axis=-1)
    input_box = np.concatenate([np.asarray(b.u_lower) - u, u - np.asarray(b.u_upper)], axis=-1)
    time_box = np.array([b.t_min - solution.t_final, solution.t_final - b.t_max])

    obs = problem.obstacles
    if len(obs):
        times = np.arange(1, n + 1) * dt
        rc, hc = [], []
        for k, tk in enumerate(times, start=1):
            moved = ObstacleSet(tuple(replace(c, center=(c.center[0] + c.velocity[0] * tk,
                                                         c.center[1] + c.velocity[1] * tk))
                                      for c in obs.circles), obs.safety_margin)
            cr, ch = clearances(q[k], moved, prm)
            rc.append(-cr)
            hc.append(-ch)
        rc, hc = np.array(rc), np.array(hc)
    else:
        rc = hc = np.full(n, -np.inf)
    return Residuals(d0, dyn, force, leash, state_box, input_box, time_box, rc, hc)


def modes_consistent(solution: CollocationSolution, params: LeashParams) -> bool:
    s = np.asarray(solution.modes, dtype=int)
    for k in range(solution.n):
        if mode_from_guards(solution.states[k], solution.inputs[k], solution.forces[k], params) != s[k]:
            return False
    return True


def certify(solution: CollocationSolution, problem: LocalProblem) -> bool:
    return constraint_residuals(solution, problem).satisfied() and modes_consistent(
        solution, problem.params)


# --------------------------------------------------------------------------
# solve

def initial_guess(problem: LocalProblem):
    """Straight-line states, average-velocity inputs, mid-range time, predicted tension."""
    n = problem.n
    b = problem.bounds
    qc, qt = problem.q_curr, problem.q_target
    t0 = 0.5 * (b.t_min + b.t_max)
    delta = qt - qc
    delta[2:4] = wrap_angle(delta[2:4])
    s = np.linspace(0.0, 1.0, n + 1)[:, None]
    states = qc + s * delta
    states[:, L] = np.minimum(states[:, L], problem.params.l0)
    vw = delta[:2] / t0
    th = states[:n, THETA]
    c, sn = np.cos(th), np.sin(th)
    inputs = np.stack([c * vw[0] + sn * vw[1], -sn * vw[0] + c * vw[1],
                       np.full(n, delta[THETA] / t0)], axis=-1)
    inputs = np.clip(inputs, b.u_lower, b.u_upper)
    idx = np.minimum(np.arange(n + 1), n - 1)
    forces = problem.tension.plant_force(states, inputs[idx])
    return states, inputs, forces, t0


def _schedule_by_guards(problem: LocalProblem, q0, inputs, dt) -> np.ndarray:
    """Roll the discrete hybrid model forward, switching modes by the guards."""
    prm = problem.params
    q = np.asarray(q0, dtype=float)
    modes = np.zeros(len(inputs), dtype=int)
    for k, u in enumerate(inputs):
        taut = q[L] >= prm.l0 - 1e-6 and mode_from_guards(q, u, problem.tension.predict(q, u), prm)
        modes[k] = int(taut)
        q = discrete_step(q, u, modes[k], dt, problem.alpha, prm, problem.variant)
    return modes


def _recompute_modes(problem: LocalProblem, sol: CollocationSolution) -> np.ndarray:
    prm = problem.params
    out = np.zeros(sol.n, dtype=int)
    for k in range(sol.n):
        ok = sol.states[k, L] >= prm.l0 - 1e-6
        out[k] = int(ok and mode_from_guards(sol.states[k], sol.inputs[k], sol.forces[k], prm))
    return out


def _snap_forces(problem: LocalProblem, states, inputs, modes, forces):
    """Optimal tension for fixed states and inputs.

    With the literal tension-change term the cost is linear in each ``F_k``
    so the optimum is an interval end; the squared variant keeps the solver's
    values projected onto the intervals.
    """
    lo, hi = force_interval(problem, states, inputs, modes)
    hi = np.maximum(hi, lo)
    w = problem.weights
    if w.squared_df:
        return np.clip(forces, lo, hi)
    coef = np.full(problem.n + 1, w.s_f)
    coef[0] -= w.s_df
    coef[-1] = w.s_df
    return np.where(coef < 0, hi, lo)


def polish(problem: LocalProblem, inputs, modes, t_final, forces) -> tuple[np.ndarray, np.ndarray]:
    """States by exact forward simulation of the inputs, tensions snapped to their optimum."""
    n = problem.n
    dt = t_final / n
    states = np.empty((n + 1, 5))
    states[0] = problem.q_curr
    for k in range(n):
        states[k + 1] = discrete_step(states[k], inputs[k], modes[k], dt, problem.alpha,
                                      problem.params, problem.variant)
    return states, _snap_forces(problem, states, inputs, modes, forces)


def solve_fixed(problem: LocalProblem, modes, initial=None, multipliers=None,
                tol: float = 1e-4) -> CollocationSolution:
    """Solve the smooth NLP for one schedule and certify the polished result."""
    modes = np.asarray(modes, dtype=int)
    prob = FixedScheduleNLP(problem, modes)
    if initial is None:
        initial = initial_guess(problem)
    x0 = prob.pack(*initial)
    lower, upper = prob.box()
    res = nlp.augmented_lagrangian(prob, x0, lower, upper, tol=tol, multipliers=multipliers)
    _, U, F, t = prob.unpack(res.x)
    U = np.clip(U, problem.bounds.u_lower, problem.bounds.u_upper)
    states, forces = polish(problem, U, modes, float(t), F)
    sol = CollocationSolution(states, U.copy(), forces, modes.copy(), float(t), 0.0,
                              res.kkt_residual, converged=res.converged,
                              multipliers=res.multipliers, merit_history=res.merit_history,
                              inner_merits=res.inner_merits,
                              iterations=res.inner_iterations)
    sol.cost = evaluate_cost(sol, problem.weights, problem.q_target, problem.params)
    sol.certified = certify(sol, problem)
    return sol


def schedules(n: int, max_switches: int = MAX_SWITCHES):
    """All binary schedules of length ``n`` with at most ``max_switches`` switches."""
    for first in (1, 0):
        for k in range(max_switches + 1):
            for cuts in itertools.combinations(range(1, n), k):
                seq = np.empty(n, dtype=int)
                val, prev = first, 0
                for c in list(cuts) + [n]:
                    seq[prev:c] = val
                    val, prev = 1 - val, c
                yield seq


def solve(q_curr, q_target, obstacles: ObstacleSet = ObstacleSet(),
          weights: PlannerWeights = PlannerWeights(), bounds: PlannerBounds = PlannerBounds(),
          tension_model: TensionModel = PAPER_MODEL, alpha=PAPER_ALPHA,
          params: LeashParams = LeashParams(), variant: Variant = Variant.PAPER,
          initial=None, enumerate_fallback: bool = True, tol: float = 1e-4,
          modes=None) -> CollocationSolution:
    """Mode-consistent locally optimal local plan from ``q_curr`` toward ``q_target``.

    ``initial`` optionally replaces the straight-line initialization with a
    ``(states, inputs, forces, t)`` warm start; ``modes`` optionally replaces
    the guard rollout as the first schedule tried.

    Raises Infeasible when no schedule yields a certified solution, or
    MaxIterations (carrying the best iterate) when the solver stalled on the
    least-violating one.
    """
    problem = LocalProblem(q_curr, q_target, obstacles, weights, bounds, tension_model,
                           alpha, params, variant)
    return solve_problem(problem, initial=initial, enumerate_fallback=enumerate_fallback,
                         tol=tol, modes=modes)


def solve_problem(problem: LocalProblem, initial=None, enumerate_fallback: bool = True,
                  tol: float = 1e-4, modes=None,
                  advance_switch: bool = True) -> CollocationSolution:
    prm = problem.params
    cr, ch = clearances(problem.q_curr, problem.obstacles, prm, margin=0.0)
    if cr < 0 or ch < 0:
        raise Infeasible("current configuration is in collision")
    guess = initial if initial is not None else initial_guess(problem)
    n = problem.n
    if modes is None:
        modes = _schedule_by_guards(problem, problem.q_curr, guess[1], guess[3] / n)
    modes = np.asarray(modes, dtype=int)
    tried: dict[tuple, CollocationSolution] = {}
    for _ in range(FIXED_POINT_ITERS):
        sol = solve_fixed(problem, modes, guess, tol=tol)
        tried[tuple(modes)] = sol
        if sol.certified:
            return _advance_first_switch(problem, sol, guess, tol, tried) if advance_switch \
                else sol
        nxt = _recompute_modes(problem, sol)
        if tuple(nxt) in tried:
            break
        modes = nxt
        log.debug("schedule not certified, retrying with %s", modes)

    if enumerate_fallback:
        start_slack = problem.q_curr[L] < prm.l0 - 1e-6
        for seq in schedules(n):
            key = tuple(seq)
            if key in tried or (start_slack and seq[0] == 1):
                continue
            tried[key] = solve_fixed(problem, seq, guess, tol=tol)
        good = [s for s in tried.values() if s.certified]
        if good:
            return min(good, key=lambda s: (s.cost, tuple(s.modes)))

    best = min(tried.values(), key=lambda s: _worst_violation(problem, s))
    if not best.converged:
        raise MaxIterations("NLP solver stalled before reaching a feasible point", best=best)
    raise Infeasible("no mode schedule produced a feasible local plan")


def _advance_first_switch(problem, sol, guess, tol, tried):
    """Cheaper of ``sol`` and the schedule that drops its leading mode segment.

    Replanning executes only the head of each plan, so a plan that defers
    its first switch keeps being re-planned with the switch still ahead.
    """
    modes = sol.modes
    change = np.flatnonzero(modes != modes[0])
    if change.size == 0 or (modes[change[0]] == 1 and problem.q_curr[L] < problem.params.l0 - 1e-6):
        return sol
    cand_modes = np.concatenate([modes[change[0]:], np.full(change[0], modes[-1])])
    key = tuple(cand_modes)
    cand = tried.get(key) or solve_fixed(problem, cand_modes, guess, tol=tol)
    tried[key] = cand
    return cand if cand.certified and cand.cost < sol.cost else sol


def _worst_violation(problem, sol) -> float:
    w = constraint_residuals(sol, problem).worst()
    return max(w["initial"], w["dynamics"], *(max(v, 0.0) for k, v in w.items()
                                               if k not in ("initial", "dynamics")))


def resimulate(solution: CollocationSolution, q0, alpha=PAPER_ALPHA,
               params: LeashParams = LeashParams(), variant: Variant = Variant.PAPER) -> np.ndarray:
    """Open-loop replay of the plan's inputs through the forced-schedule hybrid rollout."""
    from .dynamics import rollout
    states = rollout(q0, int(solution.modes[0]), solution.inputs, solution.dt, alpha, params,
                     variant, integrator="euler", modes=solution.modes)
    return np.array([np.asarray(s.q) for s in states])


# --------------------------------------------------------------------------
# serialization

def solution_to_dict(sol: CollocationSolution) -> dict:
    return {
        "schema_version": 1,
        "states": sol.states.tolist(),
        "inputs": sol.inputs.tolist(),
        "forces": sol.forces.tolist(),
        "modes": [int(s) for s in sol.modes],
        "t_final": sol.t_final,
        "cost": sol.cost,
        "kkt_residual": sol.kkt_residual,
        "certified": bool(sol.certified),
        "converged": bool(sol.converged),
    }


def solution_from_dict(doc: dict) -> CollocationSolution:
    return CollocationSolution(np.array(doc["states"], float), np.array(doc["inputs"], float),
                               np.array(doc["forces"], float), np.array(doc["modes"], int),
                               float(doc["t_final"]), float(doc["cost"]),
                               float(doc["kkt_residual"]), bool(doc.get("certified", False)),
                               bool(doc.get("converged", False)))
