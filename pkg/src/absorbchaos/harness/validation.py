"""The acceptance checks, runnable at two resolutions.

``full`` uses the stated sizes (up to 1e5 particles, h = 1e-3); ``fast``
shrinks particle counts and grids where the stated tolerance survives it.
Every check returns a dict with ``passed``, the measured ``value``, the
``threshold`` it was held to and a short ``detail`` string.
"""

from __future__ import annotations

import math
import os
import tempfile
import time

import numpy as np

from ..fpe.images import drifted_images_density
from ..fpe.parametrix import gaussian_q, parametrix_density
from ..fpe.representation import alpha_representation_residual
from ..fpe.solver import FpeConfig, FrozenDrift, boundary_flux, solve_linear_fpe, solve_nonlinear_fpe
from ..kernels import KernelSpec
from ..measures import flow_distance_dT
from ..meanfield import picard_solve
from ..particle import InitialLaw, SimConfig, girsanov_weights, simulate, simulate_batch
from .report import ExperimentReport
from .sweep import ChaosSweepConfig, run_chaos_sweep
from .testfunctions import TestFunctionSpec
from .theta import theta_batch
from .outputs import write_simulation

__all__ = ["LEVELS", "CHECKS", "run_check", "validate_all", "bootstrap_upper"]

LEVELS = {
    "fast": {
        "survival_n": 10_000,
        "fpe_h": 5e-3,
        "fpe_k": 1e-3,
        "flux_ladder": (2e-2, 1e-2, 5e-3),
        "girsanov_m": 2_000,
        "theta_reps": 100,
        "theta_steps": 200,
        "picard_h": 5e-3,
        "chaos_n": (250, 1000, 4000),
        "chaos_reps": 20,
        "parametrix_points": 31,
        "determinism_n": 500,
    },
    "full": {
        "survival_n": 100_000,
        "fpe_h": 1e-3,
        "fpe_k": 1e-3,
        "flux_ladder": (4e-3, 2e-3, 1e-3),
        "girsanov_m": 10_000,
        "theta_reps": 200,
        "theta_steps": 400,
        "picard_h": 2e-3,
        "chaos_n": (250, 1000, 4000),
        "chaos_reps": 20,
        "parametrix_points": 61,
        "determinism_n": 2000,
    },
}

POINT_WIDTH = 0.05


def _result(passed, value, threshold, detail):
    return {"passed": bool(passed), "value": value, "threshold": threshold, "detail": detail}


def bootstrap_upper(values, q=0.99, n_boot=4000, seed=0):
    """Percentile-bootstrap upper ``q`` bound of the mean of ``values``."""
    v = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, v.size, size=(n_boot, v.size))
    return float(np.quantile(v[idx].mean(axis=1), q))


# ---------------------------------------------------------------------------
# 1. stopped Brownian motion survival


def check_survival(level="full", seed=0, threads=1):
    p = LEVELS[level]
    N, n_steps = p["survival_n"], 400
    cfg = SimConfig(N, 1.0, n_steps, seed=seed, bridge_correction=True, threads=threads)
    pos, _ = simulate_batch(cfg, 1)
    a_hat = float(np.mean(pos[-1, 0] > 0))
    a = math.erf(0.5)
    tol = 3 * math.sqrt(a * (1 - a) / N) + 2 * cfg.dt
    err = abs(a_hat - a)
    return _result(err <= tol, err, tol, f"alpha_hat={a_hat:.5f} erf(1/2)={a:.5f} N={N} dt={cfg.dt}")


# ---------------------------------------------------------------------------
# 2-3. killed densities against image formulas


def _image_run(c, level):
    p = LEVELS[level]
    cfg = FpeConfig(h=p["fpe_h"], k=p["fpe_k"], horizon=1.0, point_width=POINT_WIDTH)
    flow = solve_linear_fpe(cfg, FrozenDrift.constant(c, cfg.times, cfg.x))
    # a Gaussian of variance w^2 is the heat flow of a point mass over tau = w^2 / 2
    tau = POINT_WIDTH**2 / 2
    exact = drifted_images_density(1.0 - c * tau, c, 1.0 + tau, cfg.x)
    err = float(np.trapezoid(np.abs(flow.u[-1] - exact), cfg.x))
    return err, cfg


def check_images(level="full", seed=0, threads=1):
    err, cfg = _image_run(0.0, level)
    return _result(err <= 1e-3, err, 1e-3, f"L1 error at t=1, h={cfg.h}, k={cfg.k}")


def check_drifted_images(level="full", seed=0, threads=1):
    err, cfg = _image_run(0.5, level)
    return _result(err <= 5e-3, err, 5e-3, f"c=0.5, L1 error at t=1, h={cfg.h}, k={cfg.k}")


# ---------------------------------------------------------------------------
# 4. flux identity


def flux_gap(h, c=0.5, t_min=0.1):
    """``max_k |(beta_k - beta_{k-1})/k + du/dx(t_k, 0+)|`` over ``t_k >= t_min``."""
    cfg = FpeConfig(h=h, k=h, horizon=1.0, point_width=POINT_WIDTH)
    flow = solve_linear_fpe(cfg, FrozenDrift.constant(c, cfg.times, cfg.x))
    ks = range(max(1, flow.time_index(t_min)), flow.time_grid.size)
    return max(abs((flow.beta[k] - flow.beta[k - 1]) / cfg.k - boundary_flux(flow, k)) for k in ks)


def check_flux(level="full", seed=0, threads=1):
    ladder = LEVELS[level]["flux_ladder"]
    gaps = [flux_gap(h) for h in ladder]
    ratios = [b / a for a, b in zip(gaps, gaps[1:])]
    return _result(all(r <= 0.6 for r in ratios), max(ratios), 0.6,
                   "gaps " + ", ".join(f"{g:.3g}" for g in gaps) + f" for h=k in {ladder}")


# ---------------------------------------------------------------------------
# 5. Girsanov weights


def check_girsanov(level="full", seed=0, threads=1):
    M = LEVELS[level]["girsanov_m"]
    N, T, c = 100, 1.0, 1.0
    cfg = SimConfig(N, T, 200, kernel=KernelSpec.constant(c), seed=seed, threads=threads)
    lw, qv = girsanov_weights(cfg, 1, M)
    w = np.exp(lw)
    se = float(w.std(ddof=1) / math.sqrt(M))
    dev = abs(float(w.mean()) - 1.0)
    bound = 2 * T * c * c * (1 + 1 / N)
    ok_bound = bool(np.all(qv <= bound))
    return _result(dev <= 3 * se and ok_bound, dev, 3 * se,
                   f"mean weight {w.mean():.5f} (M={M}); max quadratic variation {qv.max():.4f} <= {bound:.4f}: {ok_bound}")


# ---------------------------------------------------------------------------
# 6. second moment of the martingale functional


def theta_samples(N, reps, n_steps, seed, test, chunk=10):
    cfg = SimConfig(N, 1.0, n_steps, seed=seed)
    out = []
    for lo in range(0, reps, chunk):
        m = min(chunk, reps - lo)
        pos, _ = simulate_batch(cfg, m, first_stream=lo * N, record="all")
        out.append(theta_batch(pos, cfg.times, cfg.kernel, test, 0.0, 1.0))
    return np.concatenate(out)


def check_theta(level="full", seed=0, threads=1):
    p = LEVELS[level]
    test = TestFunctionSpec("bump", (1.0, 1.0))
    T = 1.0
    parts, ok = [], True
    worst = 0.0
    for N in (1000, 4000):
        th = theta_samples(N, p["theta_reps"], p["theta_steps"], seed + N, test)
        ub = bootstrap_upper(th**2, seed=seed)
        bound = T * test.norms["dphi"] ** 2 * test.norms["Phi"] ** 2 / N
        ok &= ub <= bound
        worst = max(worst, ub / bound)
        parts.append(f"N={N}: 99% bound {ub:.3g} vs {bound:.3g}")
    return _result(ok, worst, 1.0, "; ".join(parts) + " (value = ratio)")


# ---------------------------------------------------------------------------
# 7. fixed point against the direct nonlinear solve


def check_fixed_point(level="full", seed=0, threads=1):
    h = LEVELS[level]["picard_h"]
    cfg = FpeConfig(h=h, k=h, horizon=1.0, point_width=POINT_WIDTH)
    kern = KernelSpec.constant(0.5)
    res = picard_solve(kern, cfg, tol=1e-10, max_iter=60)
    direct = solve_nonlinear_fpe(cfg, kern)
    d = flow_distance_dT(res.pair.flow, direct, res.pair.survival, direct.survival)
    tr = res.trace
    decreasing = all(b < a for a, b in zip(tr[1:], tr[2:]))
    return _result(d <= 1e-4 and decreasing, d, 1e-4,
                   f"h={h}; trace " + ", ".join(f"{v:.2e}" for v in tr) + f"; decreasing after 2: {decreasing}")


# ---------------------------------------------------------------------------
# 8. propagation of chaos


def chaos_config(level="full", seed=0):
    p = LEVELS[level]
    law = InitialLaw("gaussian", (1.0, 0.1))
    kern = KernelSpec.rational(1.0, 1.0)
    sim = SimConfig(1, 1.0, 200, kernel=kern, initial_law=law, seed=seed)
    fcfg = FpeConfig(h=2e-3, k=2e-3, horizon=1.0, initial_law=law)
    return ChaosSweepConfig(p["chaos_n"], p["chaos_reps"], (1.0,), sim, fcfg, kern)


def check_chaos(level="full", seed=0, threads=1):
    rep = run_chaos_sweep(chaos_config(level, seed), threads=threads)
    rows = rep.tables["w1_summary"][1]
    means = [r[3] for r in rows]
    ses = [r[4] for r in rows]
    slope = rep.tables["slope"][1][0][1]
    margin_ok = all(m0 - m1 > 2 * math.hypot(s0, s1)
                    for m0, m1, s0, s1 in zip(means, means[1:], ses, ses[1:]))
    ok = margin_ok and -0.7 <= slope <= -0.2
    return _result(ok, slope, [-0.7, -0.2],
                   "mean W1 " + ", ".join(f"{m:.4f}+-{s:.4f}" for m, s in zip(means, ses))
                   + f"; slope {slope:.3f}; 2-se decreasing: {margin_ok}")


# ---------------------------------------------------------------------------
# 9. survival representation


REPRESENTATION_LADDER = ((0.02, 0.02), (0.01, 0.005), (0.005, 0.00125))


def representation_residuals(ladder=REPRESENTATION_LADDER, s=1.0, K=3):
    out = []
    for h, k in ladder:
        cfg = FpeConfig(h=h, k=k, horizon=s, point_width=POINT_WIDTH)
        flow = solve_linear_fpe(cfg, FrozenDrift.zero(cfg))
        out.append(alpha_representation_residual(flow, None, s, K=K, method="parametrix"))
    return out


def check_representation(level="full", seed=0, threads=1):
    res = representation_residuals()
    ok = res[0] <= 2e-2 and all(b <= a / 2 for a, b in zip(res, res[1:]))
    return _result(ok, res[0], 2e-2,
                   "residuals " + ", ".join(f"{r:.3g}" for r in res) + f" on (h, k) = {REPRESENTATION_LADDER}")


# ---------------------------------------------------------------------------
# 10. parametrix


def check_parametrix(level="full", seed=0, threads=1):
    c, L = 0.5, 0.1
    y = np.linspace(-3.0, 3.0, LEVELS[level]["parametrix_points"])
    approx = parametrix_density(c, 0.0, 0.0, L, y, 3)
    err = float(np.max(np.abs(approx - gaussian_q(0.0, 0.0, L, y - c * L))))
    return _result(err <= 1e-4, err, 1e-4, f"B={c}, s-t={L}, K=3, {y.size} points on |y-x|<=3")


# ---------------------------------------------------------------------------
# 11. determinism across thread counts


def determinism_artifacts(threads, level="full", seed=0):
    """Bytes of ``terminal_samples.csv`` and of a small sweep's tables."""
    N = LEVELS[level]["determinism_n"]
    cfg = SimConfig(N, 1.0, 40, kernel=KernelSpec.rational(1.0, 1.0), seed=seed, threads=threads)
    with tempfile.TemporaryDirectory() as d:
        write_simulation(simulate(cfg), d)
        with open(os.path.join(d, "terminal_samples.csv"), "rb") as fh:
            samples = fh.read()
    law = InitialLaw("gaussian", (1.0, 0.1))
    kern = KernelSpec.rational(1.0, 1.0)
    sweep = ChaosSweepConfig((50, 100), 3, (0.5, 1.0), SimConfig(1, 1.0, 40, kernel=kern, initial_law=law, seed=seed),
                             FpeConfig(h=1e-2, k=1e-2, horizon=1.0, initial_law=law), kern)
    rep = run_chaos_sweep(sweep, threads=threads)
    return samples, {name: rep.table_csv(name) for name in rep.tables}


def check_determinism(level="full", seed=0, threads=1):
    a = determinism_artifacts(1, level, seed)
    b = determinism_artifacts(8, level, seed)
    same = a[0] == b[0] and a[1] == b[1]
    return _result(same, int(same), 1, "terminal_samples.csv and sweep tables, 1 vs 8 threads")


CHECKS = {
    "stopped_bm_survival": check_survival,
    "images_density": check_images,
    "drifted_images": check_drifted_images,
    "flux_identity": check_flux,
    "girsanov_martingale": check_girsanov,
    "theta_second_moment": check_theta,
    "fixed_point_vs_direct": check_fixed_point,
    "propagation_of_chaos": check_chaos,
    "alpha_representation": check_representation,
    "parametrix": check_parametrix,
    "determinism": check_determinism,
}


def run_check(name, level="full", seed=0, threads=1):
    t0 = time.perf_counter()
    try:
        out = CHECKS[name](level=level, seed=seed, threads=threads)
    except Exception as exc:  # a crash is a failed check, reported as such
        out = _result(False, None, None, f"error: {exc!r}")
    out["seconds"] = round(time.perf_counter() - t0, 3)
    return out


def validate_all(level: str = "fast", seed: int = 0, threads: int = 1, only=None, log=None) -> ExperimentReport:
    """Run the acceptance checks and collect them in a report.

    ``only`` restricts to a subset of ``CHECKS``; ``log`` receives one line per check.
    """
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}")
    names = list(CHECKS) if only is None else list(only)
    rep = ExperimentReport.start("validate", {"level": level, "checks": names}, seed)
    rows = []
    for name in names:
        out = run_check(name, level, seed, threads)
        rep.summary[name] = out
        rows.append([name, out["passed"], out["value"], out["threshold"], out["seconds"], out["detail"]])
        if log is not None:
            log(f"{'PASS' if out['passed'] else 'FAIL'} {name}: {out['detail']} ({out['seconds']:.1f}s)")
    rep.add_table("checks", ["check", "passed", "value", "threshold", "seconds", "detail"], rows)
    return rep
