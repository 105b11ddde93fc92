"""Acceptance criteria, one test each; every test reports a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from leashguide import cli
from leashguide import local_planner as lp
from leashguide.dynamics import PAPER_ALPHA, Variant, _locate_taut_event, step_many
from leashguide.geometry import LeashParams, human_position, wrap_angle
from leashguide.obstacles import Circle, ObstacleSet, clearances, collision_free
from leashguide.sysid import identify_alpha, synthetic_log
from leashguide.tension import coverage, fit

from conftest import ACCEPTANCE, random_configurations
from test_global_planner import admissible_vs_oracle
from test_local_planner import fd_relative_error

P = LeashParams()
L0 = P.l0


@pytest.fixture
def report(capsys):
    def emit(number: int, name: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}: {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_1_leash_geometry_round_trip(report, rng):
    q = random_configurations(rng, 100_000)
    t0 = time.perf_counter()
    d = q[:, :2] - human_position(q)
    l = np.hypot(d[:, 0], d[:, 1])
    psi = np.arctan2(d[:, 1], d[:, 0])
    elapsed = time.perf_counter() - t0
    err = max(np.max(np.abs(l - q[:, 4])), np.max(np.abs(wrap_angle(psi - (q[:, 2] - q[:, 3])))))
    report(1, "geometry round trip", err <= 1e-9 and elapsed < 1.0,
           f"max error {err:.2e} (<= 1e-9), {elapsed:.3f} s (< 1 s) on 1e5 configurations")


def test_2_hybrid_invariants(report):
    rng = np.random.default_rng(2)
    b, dt, steps, hold = 1000, 1e-3, 10_000, 1000
    q = random_configurations(rng, b)
    taut = rng.random(b) < 0.5
    q[taut, 4] = L0
    t0 = time.perf_counter()
    worst_taut = worst_slack = drift = overshoot = 0.0
    switches = 0
    anchor = human_position(q)
    for k in range(steps):
        if k % hold == 0:
            u = np.column_stack([rng.uniform(-0.5, 0.5, b), rng.uniform(-0.5, 0.5, b),
                                 rng.uniform(-1, 1, b)])
        qn, tn = step_many(q, taut, u, dt, PAPER_ALPHA, P, Variant.GEOMETRIC)
        worst_taut = max(worst_taut, float(np.max(np.abs(qn[tn, 4] - L0), initial=0.0)))
        worst_slack = max(worst_slack, float(np.max(qn[~tn, 4] - L0, initial=-np.inf)))
        h = human_position(qn)
        # slack throughout the step: entered slack at its start or was already slack
        anchor = np.where((taut & ~tn)[:, None], human_position(q), anchor)
        slack = ~tn
        drift = max(drift, float(np.max(np.hypot(*(h[slack] - anchor[slack]).T), initial=0.0)))
        caught = ~taut & tn
        if caught.any():
            switches += int(caught.sum())
            qe, _ = _locate_taut_event(q[caught], u[caught], dt, Variant.GEOMETRIC, P, "rk4")
            overshoot = max(overshoot, float(np.max(np.abs(qe[:, 4] - L0))))
        q, taut = qn, tn
    elapsed = time.perf_counter() - t0
    ok = (worst_taut == 0.0 and worst_slack <= 1e-9 and drift < 1e-6 and overshoot < 1e-6
          and elapsed < 60.0)
    report(2, "hybrid invariants", ok,
           f"taut |l-l0| {worst_taut:.1e} (== 0), slack l-l0 max {worst_slack:.1e} (<= 1e-9), "
           f"slack human drift {drift:.1e} m (< 1e-6), event |l-l0| {overshoot:.1e} m (< 1e-6) "
           f"over {switches} catches, {elapsed:.1f} s (< 60 s) for 1e3 x 10 s at dt 1e-3")


def test_3_alpha_recovery(report):
    t0 = time.perf_counter()
    logs = [synthetic_log(PAPER_ALPHA, np.random.default_rng(s)) for s in range(3)]
    clean = identify_alpha(logs, grid_step=0.05).alpha.as_array()
    noisy_logs = [synthetic_log(PAPER_ALPHA, np.random.default_rng(s), position_noise=0.01)
                  for s in range(3)]
    noisy = identify_alpha(noisy_logs, grid_step=0.05).alpha.as_array()
    elapsed = time.perf_counter() - t0
    truth = PAPER_ALPHA.as_array()
    exact = bool(np.all(np.abs(clean - truth) < 1e-12))
    dev = float(np.max(np.abs(noisy - truth)))
    report(3, "discount recovery", exact and dev <= 0.1 + 1e-12 and elapsed < 300,
           f"noise-free {np.round(clean, 3).tolist()} (exact), 0.01 m noise "
           f"{np.round(noisy, 3).tolist()} max dev {dev:.2f} (<= 0.1), {elapsed:.1f} s (< 300 s)")


def test_4_tension_fit(report):
    rng = np.random.default_rng(4)
    v = rng.uniform(-0.3, 0.5, 500)
    f = 109.8 * v + 15.85 + rng.normal(0.0, 15.06, 500)
    data = np.column_stack([v, f])
    m = fit(data)
    cov = coverage(data, m)
    e1, e2 = abs(m.beta1 - 109.8) / 109.8, abs(m.beta2 - 15.85) / 15.85
    es = abs(m.sigma - 15.06) / 15.06
    report(4, "tension fit", e1 < 0.05 and e2 < 0.05 and es < 0.10 and abs(cov - 0.683) <= 0.05,
           f"beta1 {m.beta1:.2f} ({e1:.1%}), beta2 {m.beta2:.2f} ({e2:.1%}) (< 5%), "
           f"sigma {m.sigma:.2f} ({es:.1%}) (< 10%), coverage {cov:.3f} (0.683 +- 0.05)")


def test_5_astar_oracle(report):
    rng = np.random.default_rng(5)
    n = mismatch = unsafe = no_path = 0
    while n < 50:
        out = admissible_vs_oracle(rng)
        if out is None:
            continue
        n += 1
        ref, cost, wps, obs = out
        if (ref is None) != (cost is None):
            mismatch += 1
        elif cost is None:
            no_path += 1
        elif cost != pytest.approx(ref, abs=1e-12):
            mismatch += 1
        unsafe += sum(not collision_free(w, obs, P) for w in wps)
    report(5, "A* vs Dijkstra", mismatch == 0 and unsafe == 0,
           f"{n} lattices, {mismatch} cost mismatches, {no_path} agreed no-path, "
           f"{unsafe} unsafe waypoints")


def test_6_gradient_check(report):
    rng = np.random.default_rng(6)
    errs = [fd_relative_error(rng) for _ in range(20)]
    report(6, "NLP gradient check", max(errs) < 1e-4,
           f"max relative error {max(errs):.1e} (< 1e-4) over 20 problems")


def _feasible_problem(rng):
    circles = tuple(Circle((float(rng.uniform(-0.5, 2.5)), float(rng.uniform(-1.5, 1.5))),
                           float(rng.uniform(0.1, 0.25))) for _ in range(4))
    obs = ObstacleSet(circles, 0.05)
    q0 = np.array([0.0, 0.0, rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                   L0 if rng.random() < 0.7 else rng.uniform(0.8, L0)])
    tg = np.array([rng.uniform(1.0, 2.5), rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5),
                   rng.uniform(-0.5, 0.5), L0])
    cr, ch = clearances(q0, obs, P)
    if min(cr, ch) < 0.05:
        return None
    return lp.LocalProblem(q0, tg, obs, variant=Variant.PAPER)


def test_7_feasibility_transfer(report):
    rng = np.random.default_rng(7)
    solved = tried = 0
    err = 0.0
    clear = np.inf
    t0 = time.perf_counter()
    while solved < 20 and tried < 200:
        pr = _feasible_problem(rng)
        if pr is None:
            continue
        tried += 1
        try:
            sol = lp.solve_problem(pr, enumerate_fallback=False)
        except (lp.Infeasible, lp.MaxIterations):
            continue
        solved += 1
        replay = lp.resimulate(sol, pr.q_curr, pr.alpha, pr.params, pr.variant)
        d = replay - sol.states
        d[:, 2:4] = wrap_angle(d[:, 2:4])
        err = max(err, float(np.max(np.abs(d))))
        cr, ch = clearances(replay, pr.obstacles, P, margin=0.05)
        clear = min(clear, float(np.min(cr)), float(np.min(ch)))
    elapsed = time.perf_counter() - t0
    report(7, "local-plan transfer", solved == 20 and err <= 1e-6 and clear >= 0.0,
           f"{solved} solved of {tried} tried, replay error {err:.1e} (<= 1e-6), "
           f"min clearance with 0.05 m margin {clear:.4f} m (>= 0), {elapsed:.0f} s")


@pytest.fixture(scope="module")
def doorway_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("doorway")
    t0 = time.perf_counter()
    rc = cli.main(["simulate", "--scenario", "doorway", "--seed", "0", "--log", str(d / "a.csv"),
                   "--metrics", str(d / "a.json")])
    return rc, time.perf_counter() - t0, d


def test_8_doorway_end_to_end(report, doorway_run):
    rc, wall, d = doorway_run
    m = json.loads((d / "a.json").read_text())
    ok = (rc == 0 and m["success"] and m["collision_count"] == 0 and len(m["slack_intervals"]) >= 1
          and m["max_human_speed_during_slack"] < 0.05 and m["sim_time"] <= 120 and wall < 120)
    report(8, "doorway end to end", ok,
           f"exit {rc}, status {m['status']}, collisions {m['collision_count']}, "
           f"{len(m['slack_intervals'])} slack intervals (>= 1), slack human speed "
           f"{m['max_human_speed_during_slack']:.1e} m/s (< 0.05), sim {m['sim_time']:.1f} s "
           f"(<= 120), wall {wall:.0f} s (< 120)")


def test_9_determinism(report, doorway_run):
    _, _, d = doorway_run
    rc = cli.main(["simulate", "--scenario", "doorway", "--seed", "0", "--log", str(d / "b.csv"),
                   "--metrics", str(d / "b.json")])
    a, b = (d / "a.csv").read_bytes(), (d / "b.csv").read_bytes()
    report(9, "determinism", a == b and len(a) > 0,
           f"two seeded doorway runs, {len(a)} and {len(b)} bytes, identical: {a == b}")
