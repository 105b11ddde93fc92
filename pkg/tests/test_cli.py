import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from leashguide import cli, config
from leashguide import local_planner as lp
from leashguide import simulator as sim
from leashguide import sysid
from leashguide.dynamics import PAPER_ALPHA
from leashguide.obstacles import Circle, ObstacleSet, obstacles_to_json
from leashguide.tension import PAPER_MODEL, TensionSample, write_samples_csv

NS = {"svg": "http://www.w3.org/2000/svg"}


@pytest.fixture
def empty_map(tmp_path):
    p = tmp_path / "empty.json"
    p.write_text(config.dumps(obstacles_to_json(ObstacleSet())))
    return p


def test_plan_global_straight(tmp_path, empty_map):
    out = tmp_path / "wp.json"
    rc = cli.main(["plan-global", "--map", str(empty_map), "--start", "0,0,0,0",
                   "--goal", "2,0", "--bounds=-1,3,-2,2", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    xs = [w[0] for w in doc["waypoints"]]
    assert xs == sorted(xs) and xs[-1] == pytest.approx(2.0)


def test_plan_global_walled_goal(tmp_path):
    ring = [Circle((2 + 0.5 * np.cos(a), 0.5 * np.sin(a)), 0.15)
            for a in np.linspace(0, 2 * np.pi, 24, endpoint=False)]
    p = tmp_path / "walled.json"
    p.write_text(config.dumps(obstacles_to_json(ObstacleSet(tuple(ring)))))
    rc = cli.main(["plan-global", "--map", str(p), "--start", "0,0,0,0", "--goal", "2,0",
                   "--bounds=-1,3,-2,2"])
    assert rc == 2


def test_plan_global_input_errors(tmp_path, empty_map, capsys):
    assert cli.main(["plan-global", "--map", str(tmp_path / "nope.json"), "--start", "0,0,0,0",
                     "--goal", "1,0"]) == 1
    assert "nope.json" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["plan-global", "--map", str(empty_map), "--start", "0,zero", "--goal", "1,0"])
    assert exc.value.code == 1


def test_simulate_timeout_and_schema(tmp_path, capsys):
    rc = cli.main(["simulate", "--scenario", "corridor", "--max-time", "0.1",
                   "--metrics", str(tmp_path / "m.json")])
    assert rc == 2
    assert json.loads((tmp_path / "m.json").read_text())["status"] == sim.TIMEOUT
    capsys.readouterr()
    assert cli.main(["simulate", "--print-schema"]) == 0
    assert json.loads(capsys.readouterr().out)["title"] == "leashguide scenario"


def test_simulate_rejects_bad_scenario(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"schema_version": 1, "start": [0, 0, 0, 0], "goal": {"x_goal": 1, '
                 '"y_goal": 0}, "speed": 3}')
    assert cli.main(["simulate", "--scenario", str(p)]) == 1
    assert cli.main(["simulate"]) == 1


def test_short_doorway_run_renders_both_paths(tmp_path):
    log = tmp_path / "door.csv"
    assert cli.main(["simulate", "--scenario", "doorway", "--max-time", "3",
                     "--log", str(log), "--metrics", str(tmp_path / "m.json")]) == 2
    svg = tmp_path / "door.svg"
    assert cli.main(["render", str(log), "--scenario", "doorway", "--out", str(svg)]) == 0
    root = ET.fromstring(svg.read_text())
    ids = {p.get("id") for p in root.findall("svg:polyline", NS)}
    assert {"robot-path", "human-path"} <= ids
    again = tmp_path / "again.svg"
    cli.main(["render", str(log), "--scenario", "doorway", "--out", str(again)])
    assert again.read_bytes() == svg.read_bytes()


def test_render_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,log\n")
    assert cli.main(["render", str(bad)]) == 1
    assert cli.main(["render", str(bad), "--scale", "0"]) == 1


def test_render_waypoints(tmp_path, empty_map):
    wp = tmp_path / "wp.json"
    cli.main(["plan-global", "--map", str(empty_map), "--start", "0,0,0,0", "--goal", "1,0",
              "--out", str(wp)])
    svg = tmp_path / "wp.svg"
    assert cli.main(["render", str(wp), "--out", str(svg)]) == 0
    assert ET.fromstring(svg.read_text()).find("svg:g[@id='waypoints']", NS) is not None


def test_plan_local(tmp_path, capsys):
    prob = tmp_path / "p.json"
    prob.write_text(config.dumps(config.problem_to_json(
        lp.LocalProblem((0, 0, 0, 0, 1.3), (1, 0, 0, 0, 1.3)))))
    out = tmp_path / "sol.json"
    assert cli.main(["plan-local", "--problem", str(prob), "--out", str(out),
                     "--no-enumerate"]) == 0
    sol = lp.solution_from_dict(json.loads(out.read_text()))
    assert sol.certified
    assert cli.main(["plan-local"]) == 1


def _write_logs(d, tension):
    d.mkdir()
    for i in range(2):
        log = sysid.synthetic_log(PAPER_ALPHA, np.random.default_rng(i), n=101,
                                  tension=PAPER_MODEL if tension else None)
        sysid.write_trajectory_csv(d / f"log{i}.csv", log)
    return d


def test_sysid_recovers_alpha(tmp_path):
    logs = _write_logs(tmp_path / "logs", tension=True)
    out = tmp_path / "id.json"
    assert cli.main(["sysid", "--logs", str(logs), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    np.testing.assert_allclose(doc["alpha"], PAPER_ALPHA.as_array(), atol=1e-9)
    assert doc["beta1"] is not None and doc["sigma"] > 0


def test_sysid_input_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    assert cli.main(["sysid", "--logs", str(tmp_path / "empty")]) == 1
    logs = _write_logs(tmp_path / "noforce", tension=False)
    assert cli.main(["sysid", "--logs", str(logs), "--tension"]) == 1


def test_fit_tension_samples(tmp_path):
    rng = np.random.default_rng(0)
    v = rng.uniform(0, 0.5, 200)
    samples = [TensionSample(float(a), float(109.8 * a + 15.85 + rng.normal(0, 1.0))) for a in v]
    p = tmp_path / "s.csv"
    write_samples_csv(p, samples)
    out = tmp_path / "t.json"
    assert cli.main(["fit-tension", "--samples", str(p), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["beta1"] == pytest.approx(109.8, rel=0.05)
    assert cli.main(["fit-tension"]) == 1


def test_bench_writes_per_scenario_files(tmp_path):
    doc = config.scenario_to_json(sim.corridor_scenario(max_time=0.5))
    p = tmp_path / "short.json"
    p.write_text(config.dumps(doc))
    out = tmp_path / "bench"
    rc = cli.main(["bench", str(p), "--seeds", "1", "2", "--out-dir", str(out), "--jobs", "2"])
    assert rc == 2   # half a second is not enough to arrive
    summary = json.loads((out / "summary.json").read_text())
    assert sorted(summary["runs"]) == ["short-s1", "short-s2"]
    assert (out / "short-s1.csv").exists() and (out / "short-s2.metrics.json").exists()


def test_console_entry_point_runs():
    res = subprocess.run([sys.executable, "-m", "leashguide.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("plan-global", "plan-local", "simulate", "sysid", "fit-tension", "render",
                 "bench"):
        assert name in res.stdout
