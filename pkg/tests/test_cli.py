import csv
import json
import os
import subprocess
import sys

import pytest

from napping_lab import baseline as B
from napping_lab import cli


@pytest.fixture
def workdir(tmp_path, cartpole_policy, monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_DIR_ENV, raising=False)
    monkeypatch.delenv(cli.WORKERS_ENV, raising=False)
    B.save(cartpole_policy, tmp_path / "cartpole.json")
    return tmp_path


def _manifest(path, **fields):
    doc = {"schema_version": 1, "domain": "cartpole", "agent_modes": ["frozen", "napping"],
           "trials": 2, "master_seed": 7, "policy": "cartpole.json",
           "novelty": {"middle_half": True}, "output_dir": "out"}
    doc.update(fields)
    path.write_text(json.dumps(doc))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_episode_and_trial_rows(workdir):
    m = _manifest(workdir / "run.json")
    assert cli.main(["run", str(m)]) == 0
    episodes = _rows(workdir / "out" / "episodes.csv")
    trials = _rows(workdir / "out" / "trials.csv")
    assert len(episodes) == 2 * 2 * 80 and len(trials) == 4
    header = (workdir / "out" / "episodes.csv").read_text().splitlines()[0]
    assert header == ",".join(cli.EPISODE_COLUMNS)
    assert (workdir / "out" / "trials.csv").read_text().splitlines()[0] == ",".join(cli.TRIAL_COLUMNS)
    keys = [(int(r["trial_id"]), r["agent_mode"], int(r["episode_index"])) for r in episodes]
    assert keys == sorted(keys, key=lambda k: (k[0], ["frozen", "napping"].index(k[1]), k[2]))
    assert {r["detected"] for r in episodes} <= {"true", "false"}


def test_rerun_is_byte_identical(workdir):
    m = _manifest(workdir / "run.json")
    assert cli.main(["run", str(m)]) == 0
    first = {n: (workdir / "out" / n).read_bytes() for n in ("episodes.csv", "trials.csv")}
    assert cli.main(["run", str(m)]) == 0
    for name, data in first.items():
        assert (workdir / "out" / name).read_bytes() == data


def test_worker_pool_matches_serial(workdir, monkeypatch):
    m = _manifest(workdir / "run.json", agent_modes=["frozen", "online"])
    assert cli.main(["run", str(m)]) == 0
    serial = (workdir / "out" / "episodes.csv").read_bytes()
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(workdir / "pool"))
    assert cli.main(["run", str(m)]) == 0
    assert (workdir / "pool" / "episodes.csv").read_bytes() == serial


@pytest.mark.parametrize("doc", [
    "{not json",
    json.dumps({"schema_version": 2, "domain": "cartpole"}),
    json.dumps({"schema_version": 1, "domain": "pong"}),
    json.dumps({"schema_version": 1, "domain": "cartpole", "trials": 0}),
    json.dumps({"schema_version": 1, "domain": "cartpole", "agent_modes": ["greedy"]}),
    json.dumps({"schema_version": 1, "domain": "cartpole", "colour": "red"}),
    json.dumps({"schema_version": 1, "domain": "cartpole", "novelty": {"base": "all_left"}}),
    json.dumps([1, 2]),
])
def test_malformed_manifest_is_usage_error(workdir, doc):
    (workdir / "bad.json").write_text(doc)
    assert cli.main(["run", str(workdir / "bad.json")]) == cli.EXIT_USAGE


def test_bad_sweep_grid_is_usage_error(workdir):
    doc = {"schema_version": 1, "domain": "mountaincar", "grid": {"friction": [1, 2]}}
    (workdir / "s.json").write_text(json.dumps(doc))
    assert cli.main(["sweep", str(workdir / "s.json")]) == cli.EXIT_USAGE


def test_sweep_plans_grid_cells():
    manifest = {"kind": "sweep", "domain": "mountaincar", "master_seed": 0, "trials_per_cell": 2,
                "grid": {"force": [0.001, 0.002], "gravity": [0.001, 0.002, 0.003]}}
    plan = cli.plan_trials(manifest)
    assert [t for t, _, _ in plan] == list(range(12))
    assert {(p.force, p.gravity) for _, _, p in plan} == {
        (f, g) for f in (0.001, 0.002) for g in (0.001, 0.002, 0.003)}


def test_report_on_empty_dir_is_usage_error(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_USAGE
    assert "no data" in capsys.readouterr().err


def test_single_trial_report_curves_equal_raw_rewards(workdir):
    m = _manifest(workdir / "run.json", trials=1, agent_modes=["napping"])
    assert cli.main(["run", str(m)]) == 0
    assert cli.main(["report", str(workdir / "out")]) == 0
    raw = [float(r["reward"]) for r in _rows(workdir / "out" / "episodes.csv")]
    curve = _rows(workdir / "out" / "curve_napping.csv")
    assert [float(r["median_reward"]) for r in curve] == raw
    assert [float(r["mean_reward"]) for r in curve] == raw
    assert [int(r["episode_index"]) for r in curve] == list(range(-40, 40))


def test_report_on_synthetic_dataset(tmp_path):
    # two frozen trials, both failing; two napping trials, one failing
    rewards = {("frozen", 0): 10.0, ("frozen", 1): 30.0, ("napping", 0): 200.0, ("napping", 1): 100.0}
    failed = {("frozen", 0): True, ("frozen", 1): True, ("napping", 0): False, ("napping", 1): True}
    with open(tmp_path / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cli.EPISODE_COLUMNS)
        for (mode, tid), r in rewards.items():
            for i in range(-40, 40):
                w.writerow([tid, "cartpole", mode, "{}", i, r if i >= 0 else 200.0, 1,
                            "false", tid, 2 * tid, "timeout"])
    with open(tmp_path / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cli.TRIAL_COLUMNS)
        for (mode, tid), r in rewards.items():
            w.writerow([tid, "cartpole", mode, "{}", 0, r, r, "true" if failed[(mode, tid)] else "false"])
    report = cli.build_report(tmp_path)
    assert report["modes"]["frozen"]["failures"] == 2
    assert report["modes"]["napping"]["failures"] == 1
    assert report["failure_reduction_pct"] == 50.0
    assert report["modes"]["frozen"]["last10_median"] == 20.0
    assert report["modes"]["napping"]["first5_median"] == 150.0
    assert report["modes"]["napping"]["principles_mean"] == 1.5  # totals 0 and 3
    assert report["curves"]["frozen"]["median"][:40] == [200.0] * 40


def test_report_rejects_mixed_domains(tmp_path):
    with open(tmp_path / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cli.TRIAL_COLUMNS)
        w.writerow([0, "cartpole", "frozen", "{}", 0, 1, 1, "false"])
        w.writerow([1, "crossroad", "frozen", "{}", 0, 1, 1, "false"])
    with open(tmp_path / "episodes.csv", "w", newline="") as fh:
        csv.writer(fh).writerow(cli.EPISODE_COLUMNS)
        csv.writer(fh).writerow([0, "cartpole", "frozen", "{}", 0, 1, 1, "false", 0, 0, "failure"])
    assert cli.main(["report", str(tmp_path)]) == cli.EXIT_USAGE


def test_output_dir_env_override(workdir, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(workdir / "elsewhere"))
    m = _manifest(workdir / "run.json", trials=1, agent_modes=["frozen"])
    assert cli.main(["run", str(m)]) == 0
    assert (workdir / "elsewhere" / "episodes.csv").is_file()
    assert not (workdir / "out").exists()


def test_train_default_cartpole(tmp_path):
    out = tmp_path / "cp.json"
    assert cli.main(["train", "cartpole", "--out", str(out)]) == 0
    assert B.load(out).train_score >= 195


def test_train_missing_config_is_usage_error(tmp_path):
    code = cli.main(["train", "cartpole", "--out", str(tmp_path / "w.json"),
                     "--config", str(tmp_path / "nope.json")])
    assert code == cli.EXIT_USAGE


def test_train_unwritable_out_is_io_error(tmp_path):
    assert cli.main(["train", "cartpole", "--out", str(tmp_path / "no" / "such" / "w.json")]) == 2


def test_train_competence_miss_exits_3(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 1, "population": 4, "elite_frac": 0.5,
                               "max_generations": 1, "confirm_episodes": 10}))
    out = tmp_path / "w.json"
    assert cli.main(["train", "mountaincar", "--out", str(out), "--config", str(cfg)]) == 3
    assert B.load(out).domain == "mountaincar"


def test_entry_point_usage_errors(tmp_path):
    env = dict(os.environ)
    for args in (["frobnicate"], ["run"], ["report", str(tmp_path)]):
        proc = subprocess.run([sys.executable, "-m", "napping_lab", *args], env=env,
                              capture_output=True, text=True)
        assert proc.returncode == 1, (args, proc.stderr)
