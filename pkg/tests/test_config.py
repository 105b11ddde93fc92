import json

import numpy as np
import pytest

from leashguide import config
from leashguide import local_planner as lp
from leashguide import simulator as sim
from leashguide.errors import ConfigError
from leashguide.obstacles import Circle, ObstacleSet, load_map, obstacles_from_json, \
    obstacles_to_json, parse_occupancy_grid


def _minimal(**extra):
    doc = {"schema_version": 1, "start": [0, 0, 0, 0], "goal": {"x_goal": 1.0, "y_goal": 0.0}}
    doc.update(extra)
    return doc


def test_minimal_scenario_takes_defaults():
    cfg = config.scenario_from_json(_minimal())
    assert cfg.start.l == cfg.leash.l0
    assert len(cfg.obstacles) == 0
    assert cfg.sim_dt == 0.05


@pytest.mark.parametrize("name", ["doorway", "corridor"])
def test_scenario_round_trip(name):
    cfg = getattr(sim, f"{name}_scenario")(seed=4)
    doc = config.scenario_to_json(cfg)
    back = config.scenario_from_json(json.loads(config.dumps(doc)))
    assert back == cfg
    assert config.dumps(config.scenario_to_json(back)) == config.dumps(doc)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="unknown key 'colour'"):
        config.scenario_from_json(_minimal(colour="red"))
    with pytest.raises(ConfigError, match="noise.*unknown key 'sigma_x'"):
        config.scenario_from_json(_minimal(noise={"sigma_x": 1.0}))


def test_missing_and_malformed_keys():
    doc = _minimal()
    del doc["goal"]
    with pytest.raises(ConfigError, match="'goal' is required"):
        config.scenario_from_json(doc)
    with pytest.raises(ConfigError, match="start"):
        config.scenario_from_json(_minimal(start=[0, 0]))
    with pytest.raises(ConfigError, match="schema_version"):
        config.scenario_from_json(_minimal(schema_version=2))
    with pytest.raises(ConfigError, match="alpha"):
        config.scenario_from_json(_minimal(alpha=[0.8, 0.8, 0.6, 1.5]))


def test_invariant_violations_become_config_errors():
    with pytest.raises(ConfigError):
        config.scenario_from_json(_minimal(sim_dt=1.0, replan_period=0.5))
    with pytest.raises(ConfigError):
        config.scenario_from_json(_minimal(bounds={"t_min": 3.0, "t_max": 2.0}))


def test_map_reference_is_relative_to_scenario(tmp_path):
    (tmp_path / "maps").mkdir()
    obs = ObstacleSet((Circle((1.0, 2.0), 0.3),), 0.05)
    (tmp_path / "maps" / "one.json").write_text(config.dumps(obstacles_to_json(obs)))
    (tmp_path / "s.json").write_text(config.dumps(_minimal(map="maps/one.json")))
    assert config.load_scenario(tmp_path / "s.json").obstacles == obs
    (tmp_path / "both.json").write_text(config.dumps(
        _minimal(map="maps/one.json", obstacles={"circles": []})))
    with pytest.raises(ConfigError, match="either"):
        config.load_scenario(tmp_path / "both.json")


def test_read_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "a": 1,\n  oops\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        config.read_json(p)
    with pytest.raises(ConfigError):
        config.read_json(tmp_path / "missing.json")


def test_problem_round_trip():
    pr = lp.LocalProblem((0, 0, 0.1, 0.2, 1.3), (1, 2, 0, 0, 1.3),
                         ObstacleSet((Circle((0.5, 0.5), 0.2),), 0.05),
                         lp.PlannerWeights(squared_df=True), lp.PlannerBounds(n=8, t_max=4.0),
                         variant="geometric")
    back = config.problem_from_json(json.loads(config.dumps(config.problem_to_json(pr))))
    np.testing.assert_array_equal(back.q_curr, pr.q_curr)
    np.testing.assert_array_equal(back.q_target, pr.q_target)
    for k in ("obstacles", "weights", "bounds", "tension", "params", "variant"):
        assert getattr(back, k) == getattr(pr, k)
    np.testing.assert_array_equal(back.alpha.as_array(), pr.alpha.as_array())


def test_problem_rejects_unknown_key():
    doc = {"schema_version": 1, "q_curr": [0] * 5, "q_target": [1] * 5, "horizon": 3}
    with pytest.raises(ConfigError, match="unknown key 'horizon'"):
        config.problem_from_json(doc)


@pytest.mark.parametrize("name", sorted(config.SCHEMAS))
def test_schema_text_is_json(name):
    assert json.loads(config.schema_text(name)) == config.SCHEMAS[name]


# --------------------------------------------------------------------------
# maps

def test_obstacle_json_round_trip():
    obs = ObstacleSet((Circle((1.0, 2.0), 0.3), Circle((0.0, -1.0), 0.1, (0.2, 0.0))), 0.05)
    assert obstacles_from_json(json.loads(json.dumps(obstacles_to_json(obs)))) == obs


def test_obstacle_json_errors():
    with pytest.raises(ConfigError, match="unknown key 'walls'"):
        obstacles_from_json({"walls": []})
    with pytest.raises(ConfigError, match=r"circles\[0\]"):
        obstacles_from_json({"circles": [{"center": [0, 0], "radius": -1}]})


def test_occupancy_grid():
    obs = parse_occupancy_grid("resolution 0.5\norigin 1 2\nmargin 0.1\n#.\n.#\n")
    assert obs.safety_margin == 0.1
    np.testing.assert_array_equal(obs.centers, [[1.25, 2.75], [1.75, 2.25]])
    np.testing.assert_array_equal(obs.radii, [0.25, 0.25])


@pytest.mark.parametrize("text, where", [
    ("#.\n", "resolution"),
    ("resolution 1\n#.\n##x\n", "line 3"),
    ("resolution 1\n#.\n###\n", "line 2"),
    ("resolution 1\n#\norigin 0 0\n", "line 3"),
])
def test_occupancy_grid_errors(text, where):
    with pytest.raises(ConfigError, match=where):
        parse_occupancy_grid(text)


def test_load_map_dispatches_on_content(tmp_path):
    (tmp_path / "g.txt").write_text("resolution 1\n#\n")
    (tmp_path / "c.map").write_text('{"circles": [{"center": [0, 0], "radius": 1}]}')
    assert len(load_map(tmp_path / "g.txt")) == 1
    assert load_map(tmp_path / "c.map").radii[0] == 1.0
