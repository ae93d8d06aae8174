import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import erf

from absorbchaos.errors import ConfigError
from absorbchaos.kernels import KernelSpec
from absorbchaos.particle import (
    InitialLaw,
    SimConfig,
    girsanov_weight,
    girsanov_weights,
    realized_drifts,
    simulate,
    simulate_batch,
    simulate_reference,
)
from absorbchaos.rng import CounterStreams

RATIONAL = KernelSpec.rational(1.0, 1.0)
SPREAD = InitialLaw("uniform", (0.2, 2.0))


def test_single_particle_is_stopped_brownian_motion():
    cfg = SimConfig(1, 1.0, 200, seed=17, bridge_correction=False, initial_law=InitialLaw.point(0.6))
    paths = simulate(cfg)
    cs = CounterStreams(17)
    x, expected, hit = 0.6, [0.6], None
    for k in range(200):
        xi, _ = cs.step_draws(k, np.array([0]))
        if hit is None:
            x = x + math.sqrt(2 * cfg.dt) * float(xi[0])
            if x <= 0:
                hit, x = k + 1, 0.0
        expected.append(x)
    assert np.array_equal(paths.positions[:, 0], expected)
    assert paths.absorption_step[0] == (hit if hit is not None else 201)


def test_bridge_correction_uses_exit_probability():
    cfg = SimConfig(1, 1.0, 100, seed=5, initial_law=InitialLaw.point(0.3))
    paths = simulate(cfg)
    cs = CounterStreams(5)
    x = 0.3
    for k in range(100):
        xi, u = cs.step_draws(k, np.array([0]))
        xn = x + math.sqrt(2 * cfg.dt) * float(xi[0])
        if xn <= 0 or float(u[0]) < math.exp(-x * xn / cfg.dt):
            assert paths.absorption_step[0] == k + 1
            return
        x = xn
    assert paths.absorption_step[0] == 101


def test_survival_matches_reflection_principle():
    N = 100_000
    pos, _ = simulate_batch(SimConfig(N, 1.0, 400, seed=1), 1)
    a_hat = float(np.mean(pos[-1, 0] > 0))
    a = erf(0.5)
    assert abs(a_hat - a) <= 3 * math.sqrt(a * (1 - a) / N) + 2 / 400


def test_bias_without_bridge_correction_scales_like_sqrt_dt():
    # with b = 0 the corrected scheme is exact in law; the uncorrected one overestimates
    # survival by O(sqrt(dt))
    N, a = 40_000, erf(0.5)
    errs_raw, errs_corr = [], []
    for n in (50, 100, 200, 400):
        for flag, out in ((False, errs_raw), (True, errs_corr)):
            pos, _ = simulate_batch(SimConfig(N, 1.0, n, seed=8, bridge_correction=flag), 1)
            out.append(float(np.mean(pos[-1, 0] > 0)) - a)
    slope = np.polyfit(np.log([1 / 50, 1 / 100, 1 / 200, 1 / 400]), np.log(errs_raw), 1)[0]
    assert 0.3 <= slope <= 0.7
    se = math.sqrt(a * (1 - a) / N)
    assert all(abs(e) <= 4 * se for e in errs_corr)


def test_terminal_law_against_independent_stopped_bm():
    N = 10_000
    paths = simulate(SimConfig(N, 1.0, 100, seed=3, bridge_correction=False))
    g = np.random.default_rng(99)
    x = np.full(N, 1.0)
    alive = np.ones(N, bool)
    for _ in range(100):
        x = np.where(alive, x + math.sqrt(2 * 0.01) * g.standard_normal(N), 0.0)
        alive &= x > 0
        x = np.where(alive, x, 0.0)
    assert stats.ks_2samp(paths.positions[-1], x).pvalue > 0.01


def test_absorption_is_permanent_and_paths_positive_before():
    cfg = SimConfig(500, 2.0, 200, kernel=KernelSpec.constant(-0.5), seed=2, initial_law=SPREAD)
    p = simulate(cfg)
    steps = np.arange(cfg.n_steps + 1)[:, None]
    before = steps < p.absorption_step[None, :]
    assert np.all(p.positions[before] > 0)
    assert np.all(p.positions[~before] == 0)
    assert np.all(p.survival()[1:] <= p.survival()[:-1])
    with pytest.raises(ValueError):
        p.positions[0, 0] = 1.0


def test_exchangeability_permutes_paths_exactly():
    cfg = SimConfig(60, 1.0, 50, kernel=RATIONAL, seed=12, initial_law=SPREAD)
    sigma = np.random.default_rng(1).permutation(60)
    base = simulate(cfg, stream_ids=np.arange(60))
    perm = simulate(cfg, stream_ids=sigma)
    assert np.array_equal(perm.positions, base.positions[:, sigma])
    assert np.array_equal(perm.absorption_step, base.absorption_step[sigma])


def test_thread_count_does_not_change_output():
    cfg = SimConfig(1500, 1.0, 20, kernel=RATIONAL, seed=4, initial_law=SPREAD)
    a = simulate(cfg)
    b = simulate(cfg.replace(threads=4))
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.absorption_step, b.absorption_step)


def test_batch_replicas_match_single_runs():
    cfg = SimConfig(30, 1.0, 40, kernel=RATIONAL, seed=6, initial_law=SPREAD)
    pos, absorbed = simulate_batch(cfg, 3, first_stream=100, record="all")
    for m in range(3):
        single = simulate(cfg, stream_ids=100 + 30 * m + np.arange(30))
        assert np.array_equal(pos[:, m], single.positions)
        assert np.array_equal(absorbed[m], single.absorption_step)


@pytest.mark.parametrize("spec", [KernelSpec.constant(-1.0), RATIONAL, KernelSpec.separable(0.8, 0.5, 0.2)],
                         ids=lambda s: s.family)
def test_realized_drift_bounded(spec):
    p = simulate(SimConfig(300, 1.0, 50, kernel=spec, seed=7, initial_law=SPREAD))
    assert np.max(np.abs(realized_drifts(p))) <= spec.sup_bound


def test_reference_last_particle_drift_scale():
    N = 20
    p = simulate_reference(SimConfig(N, 1.0, 30, kernel=RATIONAL, seed=7, initial_law=SPREAD), N - 1)
    d = realized_drifts(p)
    assert np.all(d[:, : N - 1] == 0)
    assert np.max(np.abs(d[:, N - 1])) <= RATIONAL.sup_bound / N


def test_reference_with_zero_kernel_equals_simulate():
    cfg = SimConfig(40, 1.0, 50, seed=10, initial_law=SPREAD)
    assert np.array_equal(simulate_reference(cfg, 1).positions, simulate(cfg).positions)


def test_reference_hand_stepped_two_particles():
    c, dt = 1.0, 0.01
    cfg = SimConfig(2, 0.03, 3, kernel=KernelSpec.constant(c), seed=31,
                    initial_law=InitialLaw.point(2.0), bridge_correction=False)
    p = simulate_reference(cfg, 1)
    cs = CounterStreams(31)
    x = [2.0, 2.0]
    for k in range(3):
        xi, _ = cs.step_draws(k, np.array([0, 1]))
        x = [x[0] + math.sqrt(2 * dt) * xi[0], x[1] + (c / 2) * dt + math.sqrt(2 * dt) * xi[1]]
        assert p.positions[k + 1, 0] == pytest.approx(x[0], abs=1e-15)
        assert p.positions[k + 1, 1] == pytest.approx(x[1], abs=1e-15)


def test_reference_r_range():
    cfg = SimConfig(5, 1.0, 10)
    for r in (0, 5):
        with pytest.raises(ConfigError):
            simulate_reference(cfg, r)


def test_girsanov_zero_kernel():
    p = simulate_reference(SimConfig(10, 1.0, 20, seed=1), 3)
    w = girsanov_weight(p, 3)
    assert w.log_weight == 0.0 and w.weight == 1.0 and w.quadratic_variation == 0.0


def test_girsanov_replay_matches_batch_and_bounds():
    cfg = SimConfig(25, 1.0, 40, kernel=RATIONAL, seed=13, initial_law=SPREAD)
    lw, qv = girsanov_weights(cfg, 2, 1)
    p = simulate_reference(cfg, 2)
    w = girsanov_weight(p, 2)
    assert w.log_weight == lw[0] and w.quadratic_variation == qv[0]
    T, r, b = 1.0, 2, RATIONAL.sup_bound
    assert w.quadratic_variation <= (r + r * r / cfg.n_particles) * b * b * T
    assert math.exp(w.quadratic_variation) <= math.exp(2 * T * r * b * b)


def test_girsanov_argument_checks():
    cfg = SimConfig(10, 1.0, 20, kernel=RATIONAL)
    with pytest.raises(ConfigError):
        girsanov_weight(simulate(cfg), 1)
    with pytest.raises(ConfigError):
        girsanov_weight(simulate_reference(cfg, 2), 1)


def test_girsanov_mean_is_one():
    M = 4000
    lw, qv = girsanov_weights(SimConfig(20, 1.0, 100, kernel=KernelSpec.constant(1.0), seed=3), 1, M)
    w = np.exp(lw)
    assert abs(w.mean() - 1) <= 3 * w.std(ddof=1) / math.sqrt(M)
    assert np.all(qv <= 2 * 1.0 * (1 + 1 / 20))


def test_stability_guard_and_config_checks():
    with pytest.raises(ConfigError):
        SimConfig(10, 1.0, 10, kernel=KernelSpec.constant(1.0))
    with pytest.raises(ConfigError):
        SimConfig(0, 1.0, 10)
    with pytest.raises(ConfigError):
        SimConfig(1, 1.0, 10, seed=-1)


def test_config_round_trip():
    cfg = SimConfig(12, 2.0, 30, kernel=RATIONAL, initial_law=InitialLaw("lognormal", (0.0, 0.5)), seed=2**63)
    back = SimConfig.from_dict(cfg.to_dict())
    assert back.to_json() == cfg.to_json()


@pytest.mark.parametrize("law", [
    InitialLaw("uniform", (0.5, 2.0)),
    InitialLaw("gaussian", (1.0, 0.4)),
    InitialLaw("lognormal", (0.0, 0.5)),
    InitialLaw("tabulated-quantile", (0.1, 0.5, 0.6, 2.0)),
], ids=lambda l: l.kind)
def test_initial_law_quantile_matches_density(law):
    u = (np.arange(20_000) + 0.5) / 20_000
    q = law.quantile(u)
    assert np.all(q > 0) and np.all(np.diff(q) >= 0)
    x = np.linspace(0, law.z_max, 20_001)
    cdf = np.concatenate([[0], np.cumsum(np.diff(x) * 0.5 * (law.density(x)[1:] + law.density(x)[:-1]))])
    emp = np.searchsorted(q, x, side="right") / q.size
    assert np.max(np.abs(cdf - emp)) < 2e-3


def test_initial_law_validation():
    for kind, params in (("point", (0.0,)), ("uniform", (2.0, 1.0)), ("gaussian", (1.0,)), ("weird", ())):
        with pytest.raises(ConfigError):
            InitialLaw(kind, params)
    with pytest.raises(ConfigError):
        InitialLaw.point(1.0).density(np.array([1.0]))
