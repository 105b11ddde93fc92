"""
Command-line interface: ``leashguide <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 domain failure (no path,
infeasible local plan, simulation timeout or collision).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgio
from . import global_planner as gp
from . import local_planner as lp
from . import render
from . import simulator as sim
from . import sysid
from . import tension as tension_mod
from .errors import (ConfigError, DegenerateData, EmptyData, Infeasible, LeashGuideError,
                     MaxIterations, MissingChannel, NoPath)
from .geometry import Configuration, LeashParams
from .obstacles import ObstacleSet, load_map

EXIT_OK, EXIT_INPUT, EXIT_DOMAIN = 0, 1, 2

BUILTIN_SCENARIOS = {"doorway": sim.doorway_scenario, "corridor": sim.corridor_scenario}
INPUT_ERRORS = (ConfigError, EmptyData, MissingChannel, DegenerateData)
DOMAIN_ERRORS = (NoPath, Infeasible, MaxIterations)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _floats(n_min: int, n_max: int, what: str):
    def parse(text: str):
        try:
            vals = [float(v) for v in text.replace(",", " ").split()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"{what}: expected numbers, got {text!r}") from None
        if not n_min <= len(vals) <= n_max or not all(math.isfinite(v) for v in vals):
            raise argparse.ArgumentTypeError(
                f"{what}: expected {n_min}..{n_max} finite numbers, got {text!r}")
        return vals
    return parse


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _print_schema(name: str) -> int:
    sys.stdout.write(cfgio.schema_text(name) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# subcommands

def cmd_plan_global(args) -> int:
    obstacles = load_map(args.map)
    start = list(args.start)
    if len(start) == 4:
        start.append(LeashParams().l0)
    goal = gp.GoalSpec(*args.goal)
    spec = gp.LatticeSpec()
    if args.bounds is not None:
        x0, x1, y0, y1 = args.bounds
        spec = gp.LatticeSpec(x_bounds=(x0, x1), y_bounds=(y0, y1))
    result = gp.search(Configuration(*start), goal, obstacles, spec, admissible=args.admissible,
                       max_expansions=args.max_expansions, slack_moves=args.slack_aware)
    _emit(cfgio.dumps(gp.waypoints_to_json(result.waypoints, result.cost)) + "\n", args.out)
    return EXIT_OK


def cmd_plan_local(args) -> int:
    if args.print_schema:
        return _print_schema("problem")
    if args.problem is None:
        raise ConfigError("--problem is required")
    problem = cfgio.load_problem(args.problem)
    sol = lp.solve_problem(problem, enumerate_fallback=not args.no_enumerate)
    _emit(cfgio.dumps(lp.solution_to_dict(sol)) + "\n", args.out)
    return EXIT_OK if sol.certified else EXIT_DOMAIN


def _scenario(args) -> sim.ScenarioConfig:
    if args.scenario in BUILTIN_SCENARIOS:
        cfg = BUILTIN_SCENARIOS[args.scenario]()
    else:
        cfg = cfgio.load_scenario(args.scenario)
    over = {}
    if args.seed is not None:
        over["rng_seed"] = args.seed
    if args.max_time is not None:
        over["max_time"] = args.max_time
    try:
        return replace(cfg, **over) if over else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_simulate(args) -> int:
    if args.print_schema:
        return _print_schema("scenario")
    if args.scenario is None:
        raise ConfigError("--scenario is required (a file or one of: "
                          + ", ".join(BUILTIN_SCENARIOS) + ")")
    cfg = _scenario(args)
    if args.dump_scenario:
        _emit(cfgio.dumps(cfgio.scenario_to_json(cfg)) + "\n", args.dump_scenario)
    simlog, metrics = sim.run(cfg)
    if args.log:
        simlog.write_csv(args.log)
    text = cfgio.dumps(metrics.to_json()) + "\n"
    _emit(text, args.metrics)
    if args.metrics and args.metrics != "-":
        print(f"status={metrics.status} collisions={metrics.collision_count} "
              f"slack_intervals={len(metrics.slack_intervals)} sim_time={metrics.sim_time:.2f}")
    return EXIT_OK if metrics.success else EXIT_DOMAIN


def cmd_sysid(args) -> int:
    logs = sysid.read_log_dir(args.logs)
    result = sysid.identify_alpha(logs, grid_step=args.grid_step, refine=args.refine)
    doc = {
        "schema_version": 1,
        "alpha": [float(v) for v in result.alpha.as_array()],
        "robot_rmse": result.robot_rmse,
        "human_rmse": result.human_rmse,
        "beta1": None, "beta2": None, "sigma": None, "tension_rmse": None,
    }
    has_force = all(log.force is not None for log in logs)
    if args.tension or has_force:
        doc.update(_tension_doc([s for log in logs for s in sysid.tension_samples(log)]))
    _emit(cfgio.dumps(doc) + "\n", args.out)
    return EXIT_OK


def _tension_doc(samples) -> dict:
    model = tension_mod.fit(samples)
    v = np.array([s.v_proj for s in samples])
    f = np.array([s.force for s in samples])
    rmse = float(np.sqrt(np.mean((f - model.predict_proj(v)) ** 2)))
    return {"beta1": model.beta1, "beta2": model.beta2, "sigma": model.sigma,
            "tension_rmse": rmse, "coverage": tension_mod.coverage(samples, model)}


def cmd_fit_tension(args) -> int:
    if (args.samples is None) == (args.logs is None):
        raise ConfigError("give exactly one of --samples or --logs")
    if args.samples is not None:
        samples = tension_mod.read_samples_csv(args.samples)
    else:
        samples = [s for log in sysid.read_log_dir(args.logs)
                   for s in sysid.tension_samples(log)]
    _emit(cfgio.dumps({"schema_version": 1, **_tension_doc(samples)}) + "\n", args.out)
    return EXIT_OK


def _render_obstacles(args) -> ObstacleSet:
    if args.map and args.scenario:
        raise ConfigError("give at most one of --map or --scenario")
    if args.map:
        return load_map(args.map)
    if args.scenario:
        if args.scenario in BUILTIN_SCENARIOS:
            return BUILTIN_SCENARIOS[args.scenario]().obstacles
        return cfgio.load_scenario(args.scenario).obstacles
    return ObstacleSet()


def cmd_render(args) -> int:
    try:
        spec = render.RenderSpec(args.width, args.height, args.scale,
                                 obstacles=not args.no_obstacles, robot_path=not args.no_robot,
                                 human_path=not args.no_human, slack=not args.no_slack,
                                 waypoints=not args.no_waypoints)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    obstacles = _render_obstacles(args)
    path = Path(args.input)
    if path.suffix == ".json":
        waypoints = gp.waypoints_from_json(cfgio.read_json(path))
        svg = render.render_waypoints(waypoints, obstacles, spec)
    else:
        svg = render.render_simlog(sim.SimLog.read_csv(path), obstacles, spec)
    _emit(svg, args.out)
    return EXIT_OK


def _bench_one(item):
    name, scenario, out_dir, seed = item
    cfg = BUILTIN_SCENARIOS[scenario]() if scenario in BUILTIN_SCENARIOS \
        else cfgio.load_scenario(scenario)
    if seed is not None:
        cfg = replace(cfg, rng_seed=seed)
    simlog, metrics = sim.run(cfg)
    simlog.write_csv(Path(out_dir) / f"{name}.csv")
    cfgio.write_json(Path(out_dir) / f"{name}.metrics.json", metrics.to_json())
    return name, metrics.to_json()


def cmd_bench(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items = []
    for scenario in args.scenarios:
        stem = scenario if scenario in BUILTIN_SCENARIOS else Path(scenario).stem
        if scenario not in BUILTIN_SCENARIOS:
            cfgio.load_scenario(scenario)   # fail fast on bad input
        for seed in (args.seeds or [None]):
            name = stem if seed is None else f"{stem}-s{seed}"
            items.append((name, scenario, str(out_dir), seed))
    if len({it[0] for it in items}) != len(items):
        raise ConfigError("bench: duplicate scenario names")
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_bench_one, items))
    else:
        results = [_bench_one(it) for it in items]
    summary = {"schema_version": 1, "runs": {name: m for name, m in results}}
    cfgio.write_json(out_dir / "summary.json", summary)
    ok = True
    for name, m in results:
        ok &= m["success"]
        print(f"{name}: status={m['status']} collisions={m['collision_count']} "
              f"slack_intervals={len(m['slack_intervals'])} sim_time={m['sim_time']:.2f}")
    return EXIT_OK if ok else EXIT_DOMAIN


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leashguide", description="Leash-guided robot planning toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("plan-global", help="lattice A* route to a goal")
    g.add_argument("--map", required=True, help="JSON circle map or text occupancy grid")
    g.add_argument("--start", required=True, type=_floats(4, 5, "--start"),
                   help="x,y,theta,phi[,l]")
    g.add_argument("--goal", required=True, type=_floats(2, 4, "--goal"),
                   help="x,y[,phi[,theta]]")
    g.add_argument("--bounds", type=_floats(4, 4, "--bounds"), help="xmin,xmax,ymin,ymax")
    g.add_argument("--admissible", action="store_true", help="zero heuristic (Dijkstra)")
    g.add_argument("--slack-aware", action="store_true",
                   help="track the human position and allow slack moves")
    g.add_argument("--max-expansions", type=int, default=None)
    g.add_argument("--out", help="waypoint JSON file (default stdout)")
    g.set_defaults(func=cmd_plan_global)

    loc = sub.add_parser("plan-local", help="hybrid trajectory optimization for one problem")
    loc.add_argument("--problem", help="problem JSON")
    loc.add_argument("--out", help="solution JSON file (default stdout)")
    loc.add_argument("--no-enumerate", action="store_true",
                     help="skip the exhaustive mode-schedule fallback")
    loc.add_argument("--print-schema", action="store_true")
    loc.set_defaults(func=cmd_plan_local)

    s = sub.add_parser("simulate", help="closed-loop simulation of a scenario")
    s.add_argument("--scenario", help="scenario JSON or builtin name ("
                   + ", ".join(BUILTIN_SCENARIOS) + ")")
    s.add_argument("--seed", type=int)
    s.add_argument("--max-time", type=float)
    s.add_argument("--log", help="SimLog CSV output")
    s.add_argument("--metrics", help="metrics JSON output (default stdout)")
    s.add_argument("--dump-scenario", help="write the resolved scenario JSON here")
    s.add_argument("--print-schema", action="store_true")
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("sysid", help="identify discount coefficients from logs")
    i.add_argument("--logs", required=True, help="directory of trajectory CSV logs")
    i.add_argument("--out", help="parameter JSON file (default stdout)")
    i.add_argument("--grid-step", type=float, default=0.05)
    i.add_argument("--refine", action="store_true", help="local refinement after the grid")
    i.add_argument("--tension", action="store_true",
                   help="also fit the tension model (requires a force column)")
    i.set_defaults(func=cmd_sysid)

    t = sub.add_parser("fit-tension", help="fit the affine tension model")
    t.add_argument("--samples", help="CSV with columns v_proj,force")
    t.add_argument("--logs", help="directory of trajectory CSV logs with a force column")
    t.add_argument("--out", help="model JSON file (default stdout)")
    t.set_defaults(func=cmd_fit_tension)

    r = sub.add_parser("render", help="SVG of a SimLog CSV or waypoint JSON")
    r.add_argument("input", help="SimLog .csv or waypoint .json")
    r.add_argument("--map", help="map file for the obstacle layer")
    r.add_argument("--scenario", help="scenario JSON or builtin name for the obstacle layer")
    r.add_argument("--out", help="SVG file (default stdout)")
    r.add_argument("--width", type=int, default=800)
    r.add_argument("--height", type=int, default=600)
    r.add_argument("--scale", type=float, default=0.01, help="meters per pixel")
    for layer in ("obstacles", "robot", "human", "slack", "waypoints"):
        r.add_argument(f"--no-{layer}", action="store_true", help=f"hide the {layer} layer")
    r.set_defaults(func=cmd_render)

    b = sub.add_parser("bench", help="run several scenarios, optionally in parallel")
    b.add_argument("scenarios", nargs="+", help="scenario files or builtin names")
    b.add_argument("--out-dir", required=True)
    b.add_argument("--seeds", type=int, nargs="*", help="run each scenario once per seed")
    b.add_argument("--jobs", type=int, default=1)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"leashguide: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DOMAIN_ERRORS as exc:
        print(f"leashguide: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"leashguide: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except LeashGuideError as exc:
        print(f"leashguide: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
