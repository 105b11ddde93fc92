"""
JSON documents for scenarios and local-planning problems.

Every document carries ``"schema_version": 1`` and is validated against a
JSON Schema before use; unknown keys are rejected and the diagnostic names
the offending key. Infinite bounds are written as ``null``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np

from . import global_planner as gp
from . import local_planner as lp
from .dynamics import DiscountCoefficients, Mode, Variant
from .errors import ConfigError
from .geometry import Configuration, LeashParams
from .obstacles import load_map, obstacles_from_json, obstacles_to_json
from .simulator import ScenarioConfig
from .tension import TensionModel

SCHEMA_VERSION = 1

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_BOUND = {"type": ["number", "null"]}


def _vec(n, item=_NUM):
    return {"type": "array", "items": item, "minItems": n, "maxItems": n}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_VERSION = {"const": SCHEMA_VERSION}
_VARIANT = {"enum": [v.value for v in Variant]}

MAP_SCHEMA = _obj({
    "schema_version": _VERSION,
    "safety_margin": _NONNEG,
    "circles": {"type": "array", "items": _obj(
        {"center": _vec(2), "radius": _POS, "velocity": _vec(2)}, ("center", "radius"))},
})

_LEASH = _obj({"l0": _POS, "f_bar": _NUM, "robot_radius": _POS, "human_radius": _POS})
_TENSION = _obj({"beta1": _NUM, "beta2": _NUM, "sigma": _NONNEG}, ("beta1", "beta2"))
_ALPHA = _vec(4, {"type": "number", "minimum": 0, "maximum": 1})
_WEIGHTS = _obj({"q_target": _vec(5, _POS), "q_u": _vec(3, _POS), "s_t": _NONNEG,
                 "s_f": _NONNEG, "s_l": _NONNEG, "s_df": _NONNEG, "squared_df": {"type": "boolean"}})
_BOUNDS = _obj({"q_lower": _vec(5, _BOUND), "q_upper": _vec(5, _BOUND),
                "u_lower": _vec(3), "u_upper": _vec(3), "t_min": _POS, "t_max": _POS,
                "n": {"type": "integer", "minimum": 2}})
_LATTICE = _obj({"dx": _POS, "dy": _POS, "dphi": _POS, "x_bounds": _vec(2), "y_bounds": _vec(2),
                 "phi_bounds": {"oneOf": [{"type": "null"}, _vec(2)]}})
_GOAL = _obj({"x_goal": _NUM, "y_goal": _NUM, "phi_goal": _NUM, "theta_goal": _NUM,
              "lam": _NONNEG}, ("x_goal", "y_goal"))

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "leashguide scenario",
    "description": "Closed-loop simulation setup. Give obstacles inline or as a map file "
                   "path (relative to the scenario file); all other keys default.",
    **_obj({
        "schema_version": _VERSION,
        "obstacles": MAP_SCHEMA,
        "map": {"type": "string"},
        "start": {"oneOf": [_vec(4), _vec(5)]},
        "goal": _GOAL,
        "leash": _LEASH,
        "alpha": _ALPHA,
        "tension": _TENSION,
        "noise": _obj({"sigma_f": _NONNEG, "sigma_h": _NONNEG}),
        "replan_period": _POS,
        "sim_dt": _POS,
        "max_time": _POS,
        "rng_seed": {"type": "integer", "minimum": 0},
        "start_mode": {"enum": [0, 1]},
        "lattice": _LATTICE,
        "weights": _WEIGHTS,
        "bounds": _BOUNDS,
        "planner_variant": _VARIANT,
        "plant_variant": _VARIANT,
        "slack_aware_global": {"type": "boolean"},
        "kf_sigma_a": _POS,
        "compliance_delay": {"type": "boolean"},
        "enumerate_fallback": {"type": "boolean"},
        "waypoints": {"oneOf": [{"type": "null"},
                                {"type": "array", "items": _vec(5), "minItems": 1}]},
    }, ("schema_version", "start", "goal")),
}

PROBLEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "leashguide local-planning problem",
    **_obj({
        "schema_version": _VERSION,
        "q_curr": _vec(5),
        "q_target": _vec(5),
        "obstacles": MAP_SCHEMA,
        "map": {"type": "string"},
        "weights": _WEIGHTS,
        "bounds": _BOUNDS,
        "tension": _TENSION,
        "alpha": _ALPHA,
        "params": _LEASH,
        "variant": _VARIANT,
    }, ("schema_version", "q_curr", "q_target")),
}

SCHEMAS = {"scenario": SCENARIO_SCHEMA, "problem": PROBLEM_SCHEMA, "map": MAP_SCHEMA}


def validate(doc, schema: dict, source: str = "<document>") -> None:
    """Raise ``ConfigError`` naming the first offending key of ``doc``."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if not errors:
        return
    err = errors[0]
    where = "".join(f"[{p}]" if isinstance(p, int) else (f".{p}" if i else str(p))
                    for i, p in enumerate(err.absolute_path)) or "<root>"
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        msg = f"unknown key {extra[0]!r}" if extra else err.message
    elif err.validator == "required":
        msg = err.message.replace("is a required property", "is required")
    else:
        msg = err.message
    raise ConfigError(f"{source}: {where}: {msg}")


def read_json(path: str | Path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def dumps(doc) -> str:
    """Deterministic JSON text: fixed key order, shortest round-trip floats."""
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_json(path: str | Path, doc) -> None:
    Path(path).write_text(dumps(doc))


# --------------------------------------------------------------------------
# shared pieces

def _bounds_to_json(b: lp.PlannerBounds) -> dict:
    def fin(v):
        return [float(x) if math.isfinite(x) else None for x in v]
    return {"q_lower": fin(b.q_lower), "q_upper": fin(b.q_upper), "u_lower": fin(b.u_lower),
            "u_upper": fin(b.u_upper), "t_min": b.t_min, "t_max": b.t_max, "n": b.n}


def _bounds_from_json(doc: dict) -> lp.PlannerBounds:
    d = dict(doc)
    for key, fill in (("q_lower", -math.inf), ("q_upper", math.inf)):
        if key in d:
            d[key] = tuple(fill if v is None else float(v) for v in d[key])
    for key in ("u_lower", "u_upper"):
        if key in d:
            d[key] = tuple(float(v) for v in d[key])
    return lp.PlannerBounds(**d)


def _weights_from_json(doc: dict) -> lp.PlannerWeights:
    d = dict(doc)
    for key in ("q_target", "q_u"):
        if key in d:
            d[key] = tuple(float(v) for v in d[key])
    return lp.PlannerWeights(**d)


def _weights_to_json(w: lp.PlannerWeights) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(w).items()}


def _lattice_to_json(s: gp.LatticeSpec) -> dict:
    return {"dx": s.dx, "dy": s.dy, "dphi": s.dphi, "x_bounds": list(s.x_bounds),
            "y_bounds": list(s.y_bounds),
            "phi_bounds": None if s.phi_bounds is None else list(s.phi_bounds)}


def _lattice_from_json(doc: dict) -> gp.LatticeSpec:
    d = dict(doc)
    for key in ("x_bounds", "y_bounds", "phi_bounds"):
        if d.get(key) is not None:
            d[key] = tuple(float(v) for v in d[key])
    return gp.LatticeSpec(**d)


def _obstacles(doc: dict, source: str, base: Path | None):
    if "obstacles" in doc and "map" in doc:
        raise ConfigError(f"{source}: give either 'obstacles' or 'map', not both")
    if "map" in doc:
        path = Path(doc["map"])
        if base is not None and not path.is_absolute():
            path = base / path
        return load_map(path)
    return obstacles_from_json(doc.get("obstacles", {"circles": []}), source)


def _build(source: str, factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


# --------------------------------------------------------------------------
# scenarios

def scenario_to_json(cfg: ScenarioConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "obstacles": obstacles_to_json(cfg.obstacles),
        "start": [float(v) for v in cfg.start],
        "goal": asdict(cfg.goal),
        "leash": cfg.leash._asdict(),
        "alpha": [float(v) for v in cfg.alpha.as_array()],
        "tension": asdict(cfg.tension),
        "noise": {"sigma_f": cfg.sigma_f, "sigma_h": cfg.sigma_h},
        "replan_period": cfg.replan_period,
        "sim_dt": cfg.sim_dt,
        "max_time": cfg.max_time,
        "rng_seed": cfg.rng_seed,
        "start_mode": int(cfg.start_mode),
        "lattice": _lattice_to_json(cfg.lattice),
        "weights": _weights_to_json(cfg.weights),
        "bounds": _bounds_to_json(cfg.bounds),
        "planner_variant": Variant(cfg.planner_variant).value,
        "plant_variant": Variant(cfg.plant_variant).value,
        "slack_aware_global": cfg.slack_aware_global,
        "kf_sigma_a": cfg.kf_sigma_a,
        "compliance_delay": cfg.compliance_delay,
        "enumerate_fallback": cfg.enumerate_fallback,
        "waypoints": None if cfg.waypoints is None else [[float(v) for v in w]
                                                          for w in cfg.waypoints],
    }


def scenario_from_json(doc, source: str = "<scenario>", base: Path | None = None) -> ScenarioConfig:
    validate(doc, SCENARIO_SCHEMA, source)
    leash = _build(source, LeashParams, **doc.get("leash", {}))
    start = list(doc["start"])
    if len(start) == 4:
        start.append(leash.l0)
    kw = {}
    simple = ("replan_period", "sim_dt", "max_time", "rng_seed", "kf_sigma_a",
              "compliance_delay", "enumerate_fallback", "slack_aware_global")
    for key in simple:
        if key in doc:
            kw[key] = doc[key]
    kw.update(doc.get("noise", {}))
    if "alpha" in doc:
        kw["alpha"] = _build(source, DiscountCoefficients.from_sequence, doc["alpha"])
    if "tension" in doc:
        kw["tension"] = _build(source, TensionModel, **doc["tension"])
    if "start_mode" in doc:
        kw["start_mode"] = Mode(doc["start_mode"])
    if "lattice" in doc:
        kw["lattice"] = _build(source, _lattice_from_json, doc["lattice"])
    if "weights" in doc:
        kw["weights"] = _build(source, _weights_from_json, doc["weights"])
    if "bounds" in doc:
        kw["bounds"] = _build(source, _bounds_from_json, doc["bounds"])
    for key in ("planner_variant", "plant_variant"):
        if key in doc:
            kw[key] = Variant(doc[key])
    if doc.get("waypoints") is not None:
        kw["waypoints"] = tuple(tuple(float(v) for v in w) for w in doc["waypoints"])
    goal = _build(source, gp.GoalSpec, **doc["goal"])
    return _build(source, ScenarioConfig, _obstacles(doc, source, base),
                  Configuration(*(float(v) for v in start)), goal, leash, **kw)


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    return scenario_from_json(read_json(path), str(path), path.parent)


# --------------------------------------------------------------------------
# local-planning problems

def problem_to_json(problem: lp.LocalProblem) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "q_curr": [float(v) for v in problem.q_curr],
        "q_target": [float(v) for v in problem.q_target],
        "obstacles": obstacles_to_json(problem.obstacles),
        "weights": _weights_to_json(problem.weights),
        "bounds": _bounds_to_json(problem.bounds),
        "tension": asdict(problem.tension),
        "alpha": [float(v) for v in _alpha_values(problem.alpha)],
        "params": problem.params._asdict(),
        "variant": problem.variant.value,
    }


def _alpha_values(alpha):
    if isinstance(alpha, DiscountCoefficients):
        return alpha.as_array()
    return np.asarray(alpha, dtype=float).reshape(4)


def problem_from_json(doc, source: str = "<problem>", base: Path | None = None) -> lp.LocalProblem:
    validate(doc, PROBLEM_SCHEMA, source)
    kw = {}
    if "weights" in doc:
        kw["weights"] = _build(source, _weights_from_json, doc["weights"])
    if "bounds" in doc:
        kw["bounds"] = _build(source, _bounds_from_json, doc["bounds"])
    if "tension" in doc:
        kw["tension"] = _build(source, TensionModel, **doc["tension"])
    if "alpha" in doc:
        kw["alpha"] = _build(source, DiscountCoefficients.from_sequence, doc["alpha"])
    if "params" in doc:
        kw["params"] = _build(source, LeashParams, **doc["params"])
    if "variant" in doc:
        kw["variant"] = Variant(doc["variant"])
    return lp.LocalProblem(np.array(doc["q_curr"], float), np.array(doc["q_target"], float),
                           _obstacles(doc, source, base), **kw)


def load_problem(path: str | Path) -> lp.LocalProblem:
    path = Path(path)
    return problem_from_json(read_json(path), str(path), path.parent)


def schema_text(name: str) -> str:
    return dumps(SCHEMAS[name])
