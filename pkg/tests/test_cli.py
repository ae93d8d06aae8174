import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from absorbchaos.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, EXIT_VALIDATION, main
from absorbchaos.harness import validation


def _json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


@pytest.fixture
def sim_cfg(tmp_path):
    return _json(tmp_path / "sim.json", {
        "n_particles": 50, "horizon": 0.5, "n_steps": 20,
        "kernel": {"family": "rational-attractive", "params": [1.0, 1.0], "sup_bound": 1.0},
        "initial_law": {"kind": "gaussian", "params": [1.0, 0.2]}, "seed": 4,
    })


@pytest.fixture
def fpe_cfg(tmp_path):
    return _json(tmp_path / "fpe.json", {"h": 0.02, "k": 0.02, "horizon": 0.5, "point_width": 0.05})


@pytest.fixture
def kernel_cfg(tmp_path):
    return _json(tmp_path / "kernel.json", {"family": "constant", "params": [0.5], "sup_bound": 0.5})


def test_simulate_writes_tables(tmp_path, sim_cfg):
    out = tmp_path / "sim"
    assert main(["--seed", "7", "--out", str(out), "simulate", "--config", sim_cfg, "--paths"]) == EXIT_OK
    assert _header(out / "terminal_samples.csv") == ["particle", "stream", "x", "absorption_step"]
    assert _header(out / "survival.csv") == ["t", "alpha"]
    assert _header(out / "paths.csv")[:2] == ["t", "x0"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 7 and man["config"]["n_particles"] == 50
    x = np.loadtxt(out / "terminal_samples.csv", delimiter=",", skiprows=1)[:, 2]
    assert x.size == 50 and np.all(x >= 0)


def test_simulate_flags_after_subcommand_and_thread_invariance(tmp_path, sim_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", sim_cfg, "--out", str(a)]) == EXIT_OK
    assert main(["--threads", "4", "simulate", "--config", sim_cfg, "--out", str(b)]) == EXIT_OK
    assert (a / "terminal_samples.csv").read_bytes() == (b / "terminal_samples.csv").read_bytes()


def test_solve_fpe_zero_and_nonlinear(tmp_path, fpe_cfg, kernel_cfg):
    out = tmp_path / "lin"
    assert main(["--out", str(out), "solve-fpe", "--config", fpe_cfg]) == EXIT_OK
    assert _header(out / "survival.csv") == ["t", "beta"]
    assert _header(out / "flux.csv") == ["t", "minus_dx_p_at_0"]
    assert _header(out / "density.csv")[0] == "t"
    out2 = tmp_path / "nl"
    assert main(["--out", str(out2), "solve-fpe", "--config", fpe_cfg, "--kernel", kernel_cfg]) == EXIT_OK
    a0 = json.loads((out / "manifest.json").read_text())["alpha_T"]
    a1 = json.loads((out2 / "manifest.json").read_text())["alpha_T"]
    assert 0 < a0 < a1 < 1  # a positive drift pushes mass away from 0


def test_fixed_point(tmp_path, fpe_cfg, kernel_cfg):
    out = tmp_path / "fp"
    assert main(["--out", str(out), "fixed-point", "--config", fpe_cfg, "--kernel", kernel_cfg,
                 "--tol", "1e-10"]) == EXIT_OK
    assert _header(out / "trace.csv") == ["iter", "d_T"]
    assert _header(out / "f.csv") == ["t", "f"]
    trace = np.loadtxt(out / "trace.csv", delimiter=",", skiprows=1, ndmin=2)
    assert trace[-1, 1] < 1e-10
    man = json.loads((out / "manifest.json").read_text())
    assert man["iterations"] == trace.shape[0]


def test_fixed_point_nonconvergence_is_failure(tmp_path, fpe_cfg, kernel_cfg):
    args = ["--out", str(tmp_path / "x"), "fixed-point", "--config", fpe_cfg, "--kernel", kernel_cfg,
            "--tol", "1e-14", "--max-iter", "1"]
    assert main(args) == EXIT_FAILURE


def test_chaos_sweep(tmp_path):
    cfg = _json(tmp_path / "sweep.json", {
        "n_list": [50, 200], "replicas": 3, "times": [0.25, 0.5],
        "sim": {"horizon": 0.5, "n_steps": 50, "initial_law": {"kind": "point", "params": [1.0]}},
        "fpe": {"h": 0.01, "k": 0.01},
    })
    out = tmp_path / "sweep"
    assert main(["--seed", "3", "--out", str(out), "chaos-sweep", "--config", cfg]) == EXIT_OK
    assert _header(out / "w1.csv") == ["N", "replica", "seed", "t", "w1"]
    assert _header(out / "w1_summary.csv") == ["N", "t", "replicas", "mean_w1", "stderr"]
    assert _header(out / "slope.csv") == ["t", "loglog_slope"]
    rows = np.loadtxt(out / "w1.csv", delimiter=",", skiprows=1)
    assert rows.shape == (2 * 3 * 2, 5)


def test_validate_pass_and_fail(tmp_path, monkeypatch):
    assert main(["--out", str(tmp_path / "v"), "validate", "--only", "parametrix"]) == EXIT_OK
    assert _header(tmp_path / "v" / "checks.csv")[:2] == ["check", "passed"]
    monkeypatch.setitem(validation.CHECKS, "parametrix",
                        lambda **kw: validation._result(False, 1.0, 0.0, "forced failure"))
    assert main(["--out", str(tmp_path / "w"), "validate", "--only", "parametrix"]) == EXIT_VALIDATION
    man = json.loads((tmp_path / "w" / "manifest.json").read_text())
    assert man["passed"] is False


@pytest.mark.parametrize("argv", [
    [],
    ["simulate"],
    ["frobnicate"],
    ["--level", "slow", "validate"],
    ["--threads", "0", "validate"],
    ["validate", "--only", "no_such_check"],
    ["simulate", "--config", "/nonexistent/sim.json"],
])
def test_configuration_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv else argv) == EXIT_CONFIG


def test_bad_config_contents(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    assert main(["--out", str(tmp_path), "simulate", "--config", str(bad_json)]) == EXIT_CONFIG
    missing = _json(tmp_path / "m.json", {"horizon": 1.0})
    assert main(["--out", str(tmp_path), "simulate", "--config", missing]) == EXIT_CONFIG
    unstable = _json(tmp_path / "u.json", {"n_particles": 5, "horizon": 1.0, "n_steps": 2,
                                           "kernel": {"family": "constant", "params": [1.0], "sup_bound": 1.0}})
    assert main(["--out", str(tmp_path), "simulate", "--config", unstable]) == EXIT_CONFIG
    bad_kernel = _json(tmp_path / "k.json", {"family": "rational", "params": [1.0, 1.0], "sup_bound": 1.0})
    fpe = _json(tmp_path / "f.json", {"h": 0.02, "k": 0.02, "horizon": 0.1})
    assert main(["--out", str(tmp_path), "solve-fpe", "--config", fpe, "--kernel", bad_kernel]) == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "absorbchaos", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "chaos-sweep" in r.stdout
    r = subprocess.run([sys.executable, "-m", "absorbchaos", "simulate"], capture_output=True, text=True)
    assert r.returncode == EXIT_CONFIG
