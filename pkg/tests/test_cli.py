"""End-to-end command line: artifacts, reproducibility, exit codes."""

from __future__ import annotations

import csv
import json
import subprocess

import pytest

from strategicmdp.cli import ENV_OUTPUT, main
from strategicmdp.harness import EPISODE_COLUMNS, SUMMARY_COLUMNS

BASE_YAML = """\
environment:
  generator: recsys-small
run:
  episodes: 6
  delta: 0.1
  beta_scale: 0.1
  seeds: [0, 1]
  evaluation_cadence: 3
output:
  root: {root}
"""


@pytest.fixture
def config_path(tmp_path):
    def write(body=BASE_YAML, name="exp.yaml", root=None):
        root = str(tmp_path / "runs") if root is None else str(root)
        p = tmp_path / name
        p.write_text(body.format(root=root))
        return p

    return write


def read_rows(path):
    with path.open() as fh:
        return list(csv.reader(fh))


def test_validate_ok(config_path, capsys):
    p = config_path()
    assert main(["validate", str(p)]) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_reports_all_issues(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("environment:\n  generator: nope\nrun:\n  episodes: 0\n")
    assert main(["validate", str(p)]) == 2
    err = capsys.readouterr().err
    assert "2 issue(s)" in err
    assert "environment.generator" in err
    assert "run.episodes" in err


def test_validate_missing_file(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "absent.yaml")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_run_writes_artifact_tree(config_path, tmp_path, capsys):
    p = config_path()
    assert main(["run", str(p)]) == 0
    out = capsys.readouterr().out
    exp = tmp_path / "runs" / "recsys-small"
    assert str(exp) in out

    manifest = json.loads((exp / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["seeds"] == [0, 1]
    assert manifest["scenario"] == "recsys-small"
    assert manifest["mode"] == "general"
    assert isinstance(manifest["optimal_target_value"], float)

    rows = read_rows(exp / "summary.csv")
    assert rows[0] == SUMMARY_COLUMNS
    assert [r[0] for r in rows[1:]] == ["3", "6"]
    assert all(r[1] == "2" for r in rows[1:])

    for seed in (0, 1):
        sd = exp / f"seed-{seed:04d}"
        erows = read_rows(sd / "episodes.csv")
        assert erows[0] == EPISODE_COLUMNS
        assert len(erows) == 1 + 6
        assert all(r[0] == str(seed) for r in erows[1:])
        assert [r[1] for r in erows[1:]] == [str(k) for k in range(1, 7)]
        diag = json.loads((sd / "diagnostics.json").read_text())
        assert "regret" in diag and "naive_baseline" in diag
        sm = json.loads((sd / "manifest.json").read_text())
        assert sm["seed"] == seed
        assert sm["truth_event"] in (True, False)


def strip_wallclock_csv(path):
    return [row[:-1] for row in read_rows(path)]


def strip_wallclock_json(path):
    data = json.loads(path.read_text())
    data.pop("wallclock_ms", None)
    return data


def test_run_twice_is_identical_modulo_wallclock(config_path, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["run", str(config_path(root=a, name="a.yaml"))]) == 0
    assert main(["run", str(config_path(root=b, name="b.yaml"))]) == 0
    ea = a / "recsys-small"
    eb = b / "recsys-small"
    assert (ea / "summary.csv").read_bytes() == (eb / "summary.csv").read_bytes()
    for seed in (0, 1):
        sa, sb = ea / f"seed-{seed:04d}", eb / f"seed-{seed:04d}"
        assert strip_wallclock_csv(sa / "episodes.csv") == strip_wallclock_csv(sb / "episodes.csv")
        assert (sa / "diagnostics.json").read_bytes() == (sb / "diagnostics.json").read_bytes()
        ma, mb = strip_wallclock_json(sa / "manifest.json"), strip_wallclock_json(sb / "manifest.json")
        ma["config"].pop("output"), mb["config"].pop("output")
        assert ma == mb


def test_diagnose_writes_oracles(config_path, tmp_path, capsys):
    p = config_path()
    assert main(["diagnose", str(p)]) == 0
    assert "diagnostics.json" in capsys.readouterr().out
    diag = json.loads((tmp_path / "runs" / "recsys-small" / "diagnostics.json").read_text())
    assert diag["scenario"] == "recsys-small"
    assert diag["realizability"]["passed"] is True
    assert len(diag["ill_posedness"]) == 3
    assert len(diag["transfer"]) == 3
    for entry in diag["ill_posedness"]:
        assert entry["infinite"] or entry["value"] >= 1.0


def test_sweep_runs_every_grid_point(config_path, tmp_path, capsys):
    p = config_path()
    rc = main(["sweep", str(p), "--param", "run.episodes=3,5", "--param", "run.beta_scale=0.1,0.2"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.count("wrote") == 4
    assert "[episodes=3,beta_scale=0.1]" in out
    runs = tmp_path / "runs"
    dirs = sorted(d.name for d in runs.iterdir())
    assert dirs == [
        "recsys-small_episodes-3_beta_scale-0.1",
        "recsys-small_episodes-3_beta_scale-0.2",
        "recsys-small_episodes-5_beta_scale-0.1",
        "recsys-small_episodes-5_beta_scale-0.2",
    ]
    m = json.loads((runs / dirs[0] / "manifest.json").read_text())
    assert m["config"]["run"]["episodes"] == 3
    assert m["status"] == "ok"


def test_sweep_requires_params(config_path, capsys):
    assert main(["sweep", str(config_path())]) == 2
    assert "--param" in capsys.readouterr().err


def test_sweep_rejects_malformed_param(config_path, capsys):
    assert main(["sweep", str(config_path()), "--param", "run.episodes"]) == 2
    assert "key=v1,v2" in capsys.readouterr().err


def test_sweep_rejects_invalid_grid_point(config_path, capsys):
    assert main(["sweep", str(config_path()), "--param", "run.delta=0.05,7"]) == 2
    err = capsys.readouterr().err
    assert "sweep point [delta=7]" in err


def test_run_capacity_failure_exits_3_and_marks_manifest(config_path, tmp_path, capsys):
    body = BASE_YAML + "classes:\n  per_step_cap: 1\n"
    p = config_path(body=body)
    assert main(["run", str(p)]) == 3
    assert "CapacityError" in capsys.readouterr().err
    manifest = json.loads((tmp_path / "runs" / "recsys-small" / "manifest.json").read_text())
    assert manifest["status"] == "error"
    assert "CapacityError" in manifest["error"]


def test_output_root_env_and_flag_priority(config_path, tmp_path, monkeypatch, capsys):
    env_root = tmp_path / "from-env"
    flag_root = tmp_path / "from-flag"
    monkeypatch.setenv(ENV_OUTPUT, str(env_root))
    p = config_path()
    assert main(["run", str(p)]) == 0
    assert (env_root / "recsys-small" / "manifest.json").exists()
    assert main(["run", str(p), "--output-root", str(flag_root)]) == 0
    assert (flag_root / "recsys-small" / "manifest.json").exists()
    capsys.readouterr()


def test_output_label_overrides_directory_name(config_path, tmp_path):
    body = BASE_YAML + "  label: my-trial\n"
    assert main(["run", str(config_path(body=body))]) == 0
    assert (tmp_path / "runs" / "my-trial" / "summary.csv").exists()


def test_workers_parallel_matches_serial(config_path, tmp_path):
    a, b = tmp_path / "serial", tmp_path / "par"
    assert main(["run", str(config_path(root=a, name="s.yaml"))]) == 0
    body = BASE_YAML + "workers: 2\n"
    assert main(["run", str(config_path(body=body, root=b, name="p.yaml"))]) == 0
    for seed in (0, 1):
        sa = a / "recsys-small" / f"seed-{seed:04d}" / "episodes.csv"
        sb = b / "recsys-small" / f"seed-{seed:04d}" / "episodes.csv"
        assert strip_wallclock_csv(sa) == strip_wallclock_csv(sb)


def test_console_script_entry_point(config_path):
    p = config_path()
    proc = subprocess.run(
        ["strategicmdp", "validate", str(p)], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "valid" in proc.stdout
