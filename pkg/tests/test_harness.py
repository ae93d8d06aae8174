import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from absorbchaos.errors import ConfigError
from absorbchaos.fpe.solver import FpeConfig
from absorbchaos.harness import (
    ChaosSweepConfig,
    ExperimentReport,
    TestFunctionSpec,
    config_hash,
    loglog_slope,
    occupation_fraction,
    regularization_bound,
    run_chaos_sweep,
    theta_functional,
    theta_regularized,
)
from absorbchaos.harness.validation import bootstrap_upper, run_check, theta_samples, validate_all
from absorbchaos.kernels import KernelSpec, smooth_indicator
from absorbchaos.particle import InitialLaw, SimConfig, simulate


def _scalar_kernel(spec, x, y):
    fam, p = spec.family, spec.params
    if fam == "zero":
        return 0.0
    if fam == "constant":
        return p[0]
    if fam == "separable-product":
        return p[0] * math.exp(-p[1] * x * x) * math.exp(-p[2] * y * y)
    d = (x - y) / p[1]
    return p[0] / (1.0 + d * d)


def _theta_double_sum(paths, test, s, t, kernel, indicator=lambda v: float(v > 0)):
    """(1/N^2) sum_i sum_j of the pair functional, by explicit loops."""
    X, times = paths.positions, paths.times
    ks, kt = int(np.argmin(abs(times - s))), int(np.argmin(abs(times - t)))
    N = X.shape[1]
    Phi = test.Phi_values(times, X, s)
    total = 0.0
    for i in range(N):
        f_t = float(test.phi_derivs(X[kt, i])[0])
        f_s = float(test.phi_derivs(X[ks, i])[0])
        for j in range(N):
            integral = 0.0
            for k in range(ks, kt + 1):
                w = (times[k] - times[k - 1] if k > ks else 0.0) + (times[k + 1] - times[k] if k < kt else 0.0)
                xi, xj = X[k, i], X[k, j]
                _, d1, d2 = (float(v) for v in test.phi_derivs(xi))
                g = d2 + d1 * _scalar_kernel(kernel, xi, xj) * indicator(xj)
                integral += 0.5 * w * indicator(xi) * g
            total += Phi[i] * (f_t - f_s - integral)
    return total / N**2


# -- test functions ---------------------------------------------------


def test_bump_norms_against_finite_differences():
    spec = TestFunctionSpec("bump", (1.0, 0.5))
    x = np.linspace(0.3, 1.7, 20001)
    f, f1, f2 = spec.phi_derivs(x)
    hx = x[1] - x[0]
    np.testing.assert_allclose(np.gradient(f, hx)[5:-5], f1[5:-5], atol=1e-5)
    np.testing.assert_allclose(np.gradient(f1, hx)[5:-5], f2[5:-5], atol=1e-3)
    assert spec.norms["phi"] == pytest.approx(1.0)
    assert spec.norms["dphi"] == pytest.approx(np.max(np.abs(f1)), rel=1e-4)
    assert spec.norms["Phi"] == 1.0


def test_poly_cutoff_derivatives():
    spec = TestFunctionSpec("poly-cutoff", (3, 2.0))
    x = np.array([-2.5, -1.0, 0.0, 0.7, 2.0, 3.0])
    f, f1, f2 = spec.phi_derivs(x)
    r = x / 2.0
    inside = np.abs(r) < 1
    np.testing.assert_allclose(f, np.where(inside, (1 - r * r) ** 3, 0.0))
    np.testing.assert_allclose(f1, np.where(inside, -6 * r * (1 - r * r) ** 2 / 2.0, 0.0))
    assert spec.support() == (-2.0, 2.0)


@pytest.mark.parametrize("kw", [
    dict(phi="bump", phi_params=(1.0, 0.0)),
    dict(phi="poly-cutoff", phi_params=(2, 1.0)),
    dict(phi="poly-cutoff", phi_params=(3.5, 1.0)),
    dict(phi="sine", phi_params=(1.0, 1.0)),
    dict(Phi="constant", Phi_params=(0.5,)),
    dict(Phi="bounded-eval", Phi_params=(0.5, 0.0)),
    dict(Phi="max", Phi_params=()),
])
def test_invalid_test_functions(kw):
    with pytest.raises(ConfigError):
        TestFunctionSpec(**kw)


def test_bounded_eval_respects_measurability():
    spec = TestFunctionSpec("bump", (1.0, 0.5), "bounded-eval", (0.5, 1.2))
    times = np.linspace(0, 1, 11)
    X = np.tile(np.linspace(0, 2, 5), (11, 1))
    np.testing.assert_array_equal(spec.Phi_values(times, X, 0.5), np.minimum(X[5], 1.2))
    with pytest.raises(ConfigError):
        spec.Phi_values(times, X, 0.4)
    off = TestFunctionSpec("bump", (1.0, 0.5), "bounded-eval", (0.55, 1.2))
    with pytest.raises(ConfigError):
        off.Phi_values(times, X, 0.6)


def test_test_function_round_trip():
    spec = TestFunctionSpec("poly-cutoff", (4, 1.5), "bounded-eval", (0.2, 3.0))
    back = TestFunctionSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert back.to_dict() == spec.to_dict()
    assert back.norms == spec.norms


# -- the functional ----------------------------------------------------


@pytest.mark.parametrize("kernel", [KernelSpec.rational(1.0, 0.7), KernelSpec.separable(-0.8, 0.5, 0.3),
                                    KernelSpec.constant(0.6)])
def test_theta_equals_double_sum(kernel):
    paths = simulate(SimConfig(24, 1.0, 20, kernel=kernel, initial_law=InitialLaw("uniform", (0.1, 1.5)), seed=3))
    test = TestFunctionSpec("bump", (0.8, 0.7), "bounded-eval", (0.25, 1.0))
    got = theta_functional(paths, test, 0.25, 1.0)
    want = _theta_double_sum(paths, test, 0.25, 1.0, kernel)
    assert abs(got - want) <= 1e-10


def test_theta_regularized_equals_double_sum():
    kernel = KernelSpec.rational(1.0, 1.0)
    paths = simulate(SimConfig(16, 0.5, 25, kernel=kernel, initial_law=InitialLaw("uniform", (0.05, 0.6)), seed=8))
    test = TestFunctionSpec("bump", (0.4, 0.5))
    eta = 0.2
    got = theta_regularized(paths, test, 0.0, 0.5, eta)
    want = _theta_double_sum(paths, test, 0.0, 0.5, kernel, indicator=lambda v: float(smooth_indicator(eta, v)))
    assert abs(got - want) <= 1e-10


def test_theta_vanishes_for_test_function_away_from_paths():
    paths = simulate(SimConfig(50, 1.0, 50, kernel=KernelSpec.rational(1.0, 1.0), seed=1))
    assert np.abs(paths.positions).max() < 20
    test = TestFunctionSpec("bump", (100.0, 1.0))
    assert theta_functional(paths, test, 0.0, 1.0) == 0.0


def test_theta_zero_kernel_mean_is_zero():
    test = TestFunctionSpec("bump", (1.0, 1.0))
    th = theta_samples(4000, 100, 100, seed=21, test=test)
    se = th.std(ddof=1) / math.sqrt(th.size)
    assert abs(th.mean()) <= 3 * se


def test_theta_argument_checks():
    paths = simulate(SimConfig(10, 1.0, 10, seed=0))
    test = TestFunctionSpec()
    with pytest.raises(ConfigError):
        theta_functional(paths, test, 0.5, 0.5)
    with pytest.raises(ConfigError):
        theta_functional(paths, test, 0.0, 0.55)


def test_regularized_matches_exact_without_boundary_layer():
    # a short run started far from 0 never enters (0, eta)
    paths = simulate(SimConfig(40, 0.1, 20, kernel=KernelSpec.rational(1.0, 1.0),
                               initial_law=InitialLaw.point(3.0), seed=2))
    eta = 0.05
    X = paths.positions
    assert not np.any((X > 0) & (X < eta))
    test = TestFunctionSpec("bump", (3.0, 1.0))
    assert theta_regularized(paths, test, 0.0, 0.1, eta) == theta_functional(paths, test, 0.0, 0.1)


@pytest.mark.parametrize("seed", range(4))
def test_regularization_error_bounded_by_occupation(seed):
    kernel = KernelSpec.rational(1.0, 1.0)
    paths = simulate(SimConfig(200, 0.5, 100, kernel=kernel, initial_law=InitialLaw("uniform", (0.0, 0.5)),
                               seed=seed))
    test = TestFunctionSpec("bump", (0.3, 0.4), "bounded-eval", (0.1, 0.5))
    A = regularization_bound(test, kernel)
    for eta in (0.2, 0.1, 0.05):
        gap = abs(theta_regularized(paths, test, 0.1, 0.5, eta) - theta_functional(paths, test, 0.1, 0.5))
        occ = occupation_fraction(paths.positions, paths.times, 0.1, 0.5, eta)[0]
        assert gap <= A * occ + 1e-12


def test_occupation_decreases_with_eta():
    paths = simulate(SimConfig(2000, 0.5, 200, initial_law=InitialLaw("uniform", (0.0, 1.0)), seed=4))
    occ = [occupation_fraction(paths.positions, paths.times, 0.0, 0.5, eta)[0] for eta in (0.2, 0.1, 0.05, 0.025)]
    assert all(b < a for a, b in zip(occ, occ[1:]))
    assert occ[-1] < 0.2 * occ[0]


@given(st.floats(0.01, 1.0), st.floats(-2.0, 2.0))
def test_smooth_indicator_never_exceeds_exact(eta, x):
    assert 0.0 <= smooth_indicator(eta, x) <= float(x > 0)


# -- sweeps and reports ----------------------------------------------


def _zero_sweep(seed=5, replicas=6, n_list=(100, 400, 1600)):
    sim = SimConfig(1, 0.5, 50, seed=seed)
    fpe = FpeConfig(h=1e-2, k=1e-2, horizon=0.5, point_width=0.05)
    return ChaosSweepConfig(n_list, replicas, (0.25, 0.5), sim, fpe)


def test_sweep_same_seed_same_tables():
    a = run_chaos_sweep(_zero_sweep())
    b = run_chaos_sweep(_zero_sweep(), threads=3)
    assert {n: a.table_csv(n) for n in a.tables} == {n: b.table_csv(n) for n in b.tables}
    c = run_chaos_sweep(_zero_sweep(seed=6))
    assert c.table_csv("w1") != a.table_csv("w1")


def test_zero_kernel_sweep_decreases_at_root_n_rate():
    rep = run_chaos_sweep(_zero_sweep(replicas=12))
    assert rep.manifest["limit"] == "closed-form"
    for t, slope in rep.tables["slope"][1]:
        assert -0.75 <= slope <= -0.25, (t, slope)
    means = [r[3] for r in rep.tables["w1_summary"][1] if r[1] == 0.5]
    assert means[0] > means[1] > means[2]


def test_sweep_config_validation_and_round_trip():
    cfg = _zero_sweep()
    back = ChaosSweepConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        ChaosSweepConfig((400, 100), 2, (0.5,), cfg.sim, cfg.fpe)
    with pytest.raises(ConfigError):
        ChaosSweepConfig((100,), 2, (0.7,), cfg.sim, cfg.fpe)
    with pytest.raises(ConfigError):
        ChaosSweepConfig((10**6,), 100, (0.5,), cfg.sim, cfg.fpe, step_budget=1e6)
    with pytest.raises(ConfigError):
        ChaosSweepConfig.from_dict({"replicas": 2})


def test_loglog_slope_exact():
    n = np.array([10, 100, 1000])
    assert loglog_slope(n, 3.0 * n**-0.5) == pytest.approx(-0.5)


def test_report_manifest_and_csv(tmp_path):
    cfg = {"a": 1, "b": [0.5, 2]}
    assert config_hash(cfg) == config_hash({"b": [0.5, 2], "a": 1})
    assert config_hash(cfg) != config_hash({"a": 2, "b": [0.5, 2]})
    rep = ExperimentReport.start("demo", cfg, 9)
    rep.add_table("t", ["x", "y"], [[1, 0.1], [2, np.float64(0.25)]])
    rep.summary["check"] = {"passed": True}
    rep.write(str(tmp_path))
    with open(tmp_path / "t.csv") as fh:
        assert fh.read() == "x,y\n1,0.1\n2,0.25\n"
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 9 and man["tables"] == ["t"] and man["passed"] is True
    assert man["config_hash"] == config_hash(cfg)
    assert os.path.exists(tmp_path / "manifest.json")


def test_bootstrap_upper_bracket():
    v = np.random.default_rng(0).normal(1.0, 1.0, 400)
    ub = bootstrap_upper(v)
    assert v.mean() < ub < v.mean() + 4 * v.std() / math.sqrt(v.size)
    assert bootstrap_upper(v) == ub


def test_validate_subset_and_crash_reporting(monkeypatch):
    rep = validate_all("fast", only=["parametrix"])
    assert rep.passed and list(rep.summary) == ["parametrix"]
    from absorbchaos.harness import validation

    def boom(**kw):
        raise RuntimeError("broken")

    monkeypatch.setitem(validation.CHECKS, "parametrix", boom)
    out = run_check("parametrix", "fast")
    assert out["passed"] is False and "broken" in out["detail"]
    with pytest.raises(ValueError):
        validate_all("slow")
