import csv

import pytest
import yaml

from online_gne.cli import compare_modes, main, replay, run

BLOWUP = """\
name: singular
players: 1
action_dim: 1
boxes: [{lower: [-1], upper: [1]}]
costs: ["x1_1^(-1)"]
initial:
  x: {values: [[0.0]]}
"""


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["run", "--mode", "continuous", "--dt", "0.001", "--horizon", "0.2", "--seed", "7", "--out-dir", str(out)])
    assert code == 0
    return out


def test_run_writes_artifacts(short_run, capsys):
    names = {p.name for p in short_run.iterdir()}
    assert {"trajectory.csv", "metrics.csv", "manifest.yaml", "regret.svg", "fit.svg"} <= names
    assert "events.csv" not in names
    traj = rows(short_run / "trajectory.csv")
    assert traj[0][:3] == ["t", "x_1_1", "x_1_2"]
    assert traj[0][-5:] == [f"mu_{i}_1" for i in range(1, 6)]
    assert len(traj) == 1 + 201
    met = rows(short_run / "metrics.csv")
    assert met[0] == ["t", "R", "F", "F_over_sqrt_t", "F_1"]
    manifest = yaml.safe_load((short_run / "manifest.yaml").read_text())
    assert manifest["seed"] == 7
    assert manifest["config"]["mode"] == "continuous"
    assert len(manifest["scenario_sha256"]) == 64
    assert manifest["artifact"]["version"]


def test_rerun_is_byte_identical(short_run, tmp_path):
    again = tmp_path / "again"
    main(["run", "--mode", "continuous", "--dt", "0.001", "--horizon", "0.2", "--seed", "7", "--out-dir", str(again), "--no-plots"])
    for name in ("trajectory.csv", "metrics.csv"):
        assert (again / name).read_bytes() == (short_run / name).read_bytes()


def test_replay_from_manifest(short_run, tmp_path):
    art = replay(short_run / "manifest.yaml", tmp_path, plots=False)
    assert art.trajectory_csv.read_bytes() == (short_run / "trajectory.csv").read_bytes()
    assert art.metrics_csv.read_bytes() == (short_run / "metrics.csv").read_bytes()


def test_event_run_logs_every_player(tmp_path, capsys):
    code = main(["run", "--mode", "event", "--horizon", "0.3", "--out-dir", str(tmp_path)])
    assert code == 0
    ev = rows(tmp_path / "events.csv")
    assert ev[0] == ["player", "time"]
    assert {r[0] for r in ev[1:]} == {"1", "2", "3", "4", "5"}
    assert (tmp_path / "events.svg").exists()
    out = capsys.readouterr().out
    assert "events/player" in out and "zeno check       pass" in out


def test_zero_horizon(tmp_path, capsys):
    assert main(["run", "--horizon", "0", "--out-dir", str(tmp_path)]) == 0
    assert rows(tmp_path / "metrics.csv") == [["t", "R", "F", "F_over_sqrt_t", "F_1"]]
    assert len(rows(tmp_path / "trajectory.csv")) == 2


def test_blowup_exit_code(tmp_path, capsys):
    scen = tmp_path / "singular.yaml"
    scen.write_text(BLOWUP)
    assert main(["run", "--scenario", str(scen), "--out-dir", str(tmp_path / "o")]) == 3
    assert "non-finite" in capsys.readouterr().err


def test_bad_scenario_exit_code(capsys):
    assert main(["run", "--scenario", "does-not-exist.yaml"]) == 2


def test_show_prints_yaml(capsys):
    assert main(["show", "--scenario", "paper5"]) == 0
    doc = yaml.safe_load(capsys.readouterr().out)
    assert doc["players"] == 5 and doc["game"] == {"builtin": "paper5"}


def test_compare_unreachable_thresholds():
    rep = compare_modes("paper5", {"horizon": 0.2, "beta0": 1e12, "gamma0": 1e12})
    assert rep.steps == 200
    assert rep.events_after_init == [0] * 5
    assert rep.saving_ratio > 0.99
    assert set(rep.final_regret) == {"continuous", "event"}


def test_compare_command(capsys):
    assert main(["compare", "--horizon", "0.1"]) == 0
    out = capsys.readouterr().out
    assert "saving ratio" in out


def test_run_in_memory():
    art = run("paper5", {"horizon": 0.05, "dt": 0.01})
    assert art.out_dir is None and art.manifest is None
    assert len(art.series) == 6
    assert art.bounds.label == "estimate"
    assert any("k_mu" in w for w in art.warnings)
