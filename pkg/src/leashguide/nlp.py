"""
Augmented-Lagrangian solver for smooth NLPs with box bounds.

Equalities ``h(x) = 0`` and inequalities ``g(x) <= 0`` are moved into the
merit function

    L(x) = J(x) + lam.h + rho/2 |h|^2 + 1/(2 rho) sum(max(0, mu + rho g)^2 - mu^2)

which is minimized over the box by an inner line-search method with
analytic gradients. The box itself is never violated.

Two inner methods are available. ``"gauss-newton"`` scales the projected
gradient by the damped Gauss-Newton model of ``L`` (cost Hessian plus
``rho * J^T J`` of the equalities and the active inequalities) and raises
the damping until the projected step satisfies the Armijo condition; it
needs ``jacobian()`` and ``cost_hessian()`` on the evaluation. ``"lbfgs"``
hands the merit to L-BFGS-B and only needs gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize


class Evaluation(Protocol):
    cost: float
    cost_grad: np.ndarray
    h: np.ndarray
    g: np.ndarray

    def vjp(self, wh: np.ndarray, wg: np.ndarray) -> np.ndarray: ...


class Problem(Protocol):
    def evaluate(self, x: np.ndarray) -> Evaluation: ...


@dataclass
class Multipliers:
    lam: np.ndarray
    mu: np.ndarray
    rho: float


@dataclass
class ALResult:
    x: np.ndarray
    multipliers: Multipliers
    cost: float
    violation: float
    kkt_residual: float
    converged: bool
    outer_iterations: int
    inner_iterations: int
    merit_history: list = field(default_factory=list)
    inner_merits: list = field(default_factory=list)  # (before, after) per outer iteration, fixed multipliers


def merit(ev: Evaluation, m: Multipliers) -> tuple[float, np.ndarray]:
    """Augmented-Lagrangian value and gradient at one evaluation."""
    val, wh, shifted = _merit_parts(ev, m)
    return val, ev.cost_grad + ev.vjp(wh, shifted)


def _merit_parts(ev, m):
    rho = m.rho
    wh = m.lam + rho * ev.h
    shifted = np.maximum(0.0, m.mu + rho * ev.g)
    val = (ev.cost + m.lam @ ev.h + 0.5 * rho * (ev.h @ ev.h)
           + (shifted @ shifted - m.mu @ m.mu) / (2.0 * rho))
    return float(val), wh, shifted


def violation(ev: Evaluation) -> float:
    v = 0.0
    if ev.h.size:
        v = max(v, float(np.max(np.abs(ev.h))))
    if ev.g.size:
        v = max(v, float(np.max(ev.g)))
    return max(v, 0.0)


def exact_penalty(ev: Evaluation, weight: float) -> float:
    return float(ev.cost + weight * (np.abs(ev.h).sum() + np.maximum(ev.g, 0.0).sum()))


def projected_gradient(x, grad, lower, upper, eps=1e-10) -> np.ndarray:
    pg = grad.copy()
    pg[(x <= lower + eps) & (grad > 0)] = 0.0
    pg[(x >= upper - eps) & (grad < 0)] = 0.0
    return pg


def _gauss_newton(problem, x, lower, upper, m, tol, maxiter):
    """Projected Gauss-Newton descent on the merit with adaptive damping.

    Each trial direction solves ``(H + delta I) d = -grad`` on the free
    variables; ``delta`` grows until the projected step satisfies the Armijo
    condition and shrinks again after a success. Variables that enter the
    cost only linearly get their curvature from the damping alone.
    """
    ev = problem.evaluate(x)
    val, wh, shifted = _merit_parts(ev, m)
    grad = ev.cost_grad + ev.vjp(wh, shifted)
    fixed_box = lower >= upper
    delta = 1e-3
    it = 0
    for it in range(1, maxiter + 1):
        pg = projected_gradient(x, grad, lower, upper)
        if np.max(np.abs(pg), initial=0.0) <= tol:
            break
        eps = 1e-10
        active = fixed_box | ((x <= lower + eps) & (grad > 0)) | ((x >= upper - eps) & (grad < 0))
        free = ~active
        jh, jg = ev.jacobian()
        act = shifted > 0
        H = ev.cost_hessian() + m.rho * (jh.T @ jh)
        extra = getattr(ev, "constraint_hessian", None)
        extra = extra(wh, shifted) if extra is not None else None
        if extra is not None:
            H += extra
        if act.any():
            ja = jg[act]
            H += m.rho * (ja.T @ ja)
        Hf = H[np.ix_(free, free)]
        gf = grad[free]
        diag = np.diag_indices_from(Hf)
        base = Hf[diag].copy()
        accepted = False
        for _ in range(30):
            Hf[diag] = base + delta
            d = np.zeros_like(x)
            try:
                d[free] = -cho_solve(cho_factor(Hf), gf)
            except LinAlgError:
                delta *= 10.0
                continue
            xn = np.clip(x + d, lower, upper)
            decrease = grad @ (xn - x)
            if decrease < 0:
                evn = problem.evaluate(xn)
                valn, whn, shn = _merit_parts(evn, m)
                if valn <= val + 1e-4 * decrease:
                    accepted = True
                    delta = max(delta * 0.25, 1e-9)
                    break
            delta *= 8.0
        if not accepted:
            break
        step = np.max(np.abs(xn - x), initial=0.0)
        x, ev, val, wh, shifted = xn, evn, valn, whn, shn
        grad = ev.cost_grad + ev.vjp(wh, shifted)
        if step <= 1e-14:
            break
    return x, it


def _lbfgs(problem, x, lower, upper, m, tol, maxiter):
    bounds = list(zip(np.where(np.isfinite(lower), lower, None),
                      np.where(np.isfinite(upper), upper, None)))
    res = minimize(lambda z: merit(problem.evaluate(z), m), x, jac=True, method="L-BFGS-B",
                   bounds=bounds, options={"maxiter": maxiter, "gtol": tol, "ftol": 1e-15,
                                           "maxcor": 20})
    return np.clip(res.x, lower, upper), int(res.nit)


_INNER = {"gauss-newton": _gauss_newton, "lbfgs": _lbfgs}


def augmented_lagrangian(problem: Problem, x0, lower, upper, tol: float = 1e-4,
                         multipliers: Multipliers | None = None, rho0: float = 10.0,
                         rho_max: float = 1e5, max_outer: int = 30,
                         inner_maxiter: int = 100, penalty_weight: float = 1e3,
                         inner: str = "gauss-newton", callback=None) -> ALResult:
    """Minimize subject to ``h = 0``, ``g <= 0`` and ``lower <= x <= upper``.

    Stops once both the constraint violation and the projected Lagrangian
    gradient are below ``tol``. ``merit_history`` records the exact-penalty
    merit ``J + penalty_weight * |violation|_1`` after each outer iteration;
    it can rise when the multipliers move. ``inner_merits`` holds the
    augmented-Lagrangian value before and after each inner solve, with the
    multipliers of that iteration, which the line search never increases.
    """
    try:
        inner_solve = _INNER[inner]
    except KeyError:
        raise ValueError(f"unknown inner method {inner!r}") from None
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    ev = problem.evaluate(x)
    if multipliers is None or multipliers.lam.size != ev.h.size or multipliers.mu.size != ev.g.size:
        m = Multipliers(np.zeros(ev.h.size), np.zeros(ev.g.size), rho0)
    else:
        m = Multipliers(multipliers.lam.copy(), multipliers.mu.copy(), multipliers.rho)
    prev_viol = violation(ev)
    history = []
    inner_total = 0
    kkt = np.inf
    converged = False

    inner_merits = []
    outer = 0
    for outer in range(1, max_outer + 1):
        before = merit(ev, m)[0]
        x, nit = inner_solve(problem, x, lower, upper, m, 0.1 * tol, inner_maxiter)
        inner_total += nit
        ev = problem.evaluate(x)
        inner_merits.append((before, merit(ev, m)[0]))
        viol = violation(ev)
        m.lam = m.lam + m.rho * ev.h
        m.mu = np.maximum(0.0, m.mu + m.rho * ev.g)
        lag_grad = ev.cost_grad + ev.vjp(m.lam, m.mu)
        stat = float(np.max(np.abs(projected_gradient(x, lag_grad, lower, upper)), initial=0.0))
        kkt = max(viol, stat)
        history.append(exact_penalty(ev, penalty_weight))
        if callback is not None:
            callback(outer, x, viol, stat, m.rho, nit)
        if kkt <= tol:
            converged = True
            break
        if viol > 0.25 * prev_viol and viol > tol:
            m.rho = min(m.rho * 10.0, rho_max)
        prev_viol = viol
    return ALResult(x, m, float(ev.cost), violation(ev), kkt, converged, outer,
                    inner_total, history, inner_merits)
