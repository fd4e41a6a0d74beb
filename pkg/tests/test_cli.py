import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from cellcrowd.cli import main


def cli(*args, env=None, cwd=None):
    e = dict(os.environ)
    e.update(env or {})
    return subprocess.run([sys.executable, "-m", "cellcrowd", *map(str, args)],
                          capture_output=True, text=True, env=e, cwd=cwd)


@pytest.fixture
def small(tmp_path):
    f = tmp_path / "small.toml"
    f.write_text("n_cells = 20\nT = 0.05\n")
    return f


def test_run_writes_under_out(tmp_path, small):
    r = cli("run", small, "--seed", 2, "--out", tmp_path / "o")
    assert r.returncode == 0, r.stderr
    m = json.loads((tmp_path / "o" / "small_seed2" / "manifest.json").read_text())
    assert m["status"] == "ok" and m["seed"] == 2


def test_env_var_sets_default_root(tmp_path, small):
    r = cli("run", small, "--trajectory", env={"CELLCROWD_OUT": str(tmp_path / "env")})
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "env" / "small_seed0" / "trajectory.csv").exists()


def test_default_root_is_runs(tmp_path, small, monkeypatch):
    monkeypatch.delenv("CELLCROWD_OUT", raising=False)
    r = cli("run", small, cwd=tmp_path)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "runs" / "small_seed0" / "metrics.csv").exists()


def test_run_failure_exit_code(tmp_path):
    f = tmp_path / "tight.toml"
    f.write_text("n_cells = 200\nT = 0.05\nrelax_budget = 0\n")
    r = cli("run", f, "--out", tmp_path)
    assert r.returncode == 1
    assert "RelaxationFailed" in r.stderr


def test_config_error_exit_code(tmp_path):
    f = tmp_path / "bad.toml"
    f.write_text("[polarity]\nspeeed = 1\n")
    for cmd in ("run", "validate", "sweep"):
        r = cli(cmd, f)
        assert r.returncode == 2
        assert "speeed" in r.stderr
    assert cli("validate", tmp_path / "missing.toml").returncode == 2


def test_validate_reports_summary(small):
    r = cli("validate", small)
    assert r.returncode == 0
    assert "N=20" in r.stdout and "WalledSquare" in r.stdout


def test_sweep_and_plot(tmp_path):
    f = tmp_path / "sw.toml"
    f.write_text('n_cells = 20\nT = 0.05\n[sweep]\nn_reps = 2\n'
                 '[[sweep.axis]]\npath = "D"\nvalues = [0.0, 2.0]\n')
    r = cli("sweep", f, "--out", tmp_path, "--jobs", 1, "-q")
    assert r.returncode == 0, r.stderr
    summary = tmp_path / "sw" / "summary.csv"
    assert summary.exists()
    r = cli("plot", summary, "--out", tmp_path / "figs")
    assert r.returncode == 0, r.stderr
    assert any(p.suffix == ".svg" for p in (tmp_path / "figs").iterdir())


def test_sweep_without_axes_is_config_error(small):
    assert main(["sweep", str(small)]) == 2


def test_bad_jobs_and_missing_plot_input(tmp_path, small):
    assert main(["sweep", str(small), "--jobs", "0"]) == 2
    assert main(["plot", str(tmp_path / "nothing.csv")]) == 2


@pytest.mark.parametrize("recipe", sorted((Path(__file__).parents[1] / "configs").glob("*.toml")),
                         ids=lambda p: p.stem)
def test_shipped_recipes_validate(recipe):
    assert main(["validate", str(recipe)]) == 0
