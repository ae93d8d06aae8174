"""Martingale-problem functional evaluated on the empirical measure of the paths.

For a test function ``phi`` and a bounded path weight ``Phi``, the functional
evaluated at the product of the empirical path measure with itself is

    Theta = (1/N^2) sum_{i,j} Phi_i (phi(x^i_t) - phi(x^i_s)
              - int_s^t iota(x^i_u) [phi''(x^i_u) + phi'(x^i_u) b(u, x^i_u, x^j_u) iota(x^j_u)] du),

which collapses to a single average over ``i`` with the empirical drift.  The
diagonal pairs ``i = j`` are included.  The time integral is the trapezoid
rule on the simulation grid.  ``iota`` is the indicator of ``x > 0``; the
regularized version replaces it with the smooth indicator of width ``eta``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ..kernels import KernelSpec, eval_kernel, smooth_indicator
from ..measures import _grid_index
from ..particle import ParticlePaths
from .testfunctions import TestFunctionSpec

__all__ = [
    "theta_functional",
    "theta_regularized",
    "theta_batch",
    "occupation_fraction",
    "regularization_bound",
]


def _indicator(x):
    return (x > 0).astype(float)


def _weighted_sums(spec: KernelSpec, t, X, W, chunk=512):
    """Rows ``m``: ``sum_j b(t, X[m, i], X[m, j]) W[m, j]``."""
    fam, p = spec.family, spec.params
    if fam == "zero":
        return np.zeros_like(X)
    if fam == "constant":
        return np.repeat(p[0] * W.sum(axis=1, keepdims=True), X.shape[1], axis=1)
    if fam == "separable-product":
        tot = np.sum(np.exp(-p[2] * X * X) * W, axis=1, keepdims=True)
        return p[0] * np.exp(-p[1] * X * X) * tot
    out = np.empty_like(X)
    for m in range(X.shape[0]):
        for lo in range(0, X.shape[1], chunk):
            K = eval_kernel(spec, t, X[m, lo : lo + chunk, None], X[m, None, :])
            out[m, lo : lo + chunk] = K @ W[m]
    return out


def theta_batch(positions, times, kernel: KernelSpec, test: TestFunctionSpec, s: float, t: float,
                indicator=_indicator):
    """Functional for a batch of runs; ``positions`` is (steps, runs, N).  Returns (runs,)."""
    X = np.asarray(positions, dtype=float)
    if X.ndim == 2:
        X = X[:, None, :]
    times = np.asarray(times, dtype=float)
    try:
        ks, kt = _grid_index(times, s), _grid_index(times, t)
    except Exception:
        raise ConfigError(f"times s = {s}, t = {t} must lie on the simulation grid") from None
    if not ks < kt:
        raise ConfigError("need s < t")
    N = X.shape[2]
    Phi = test.Phi_values(times, X, s)
    f_s = test.phi_derivs(X[ks])[0]
    f_t = test.phi_derivs(X[kt])[0]
    integral = np.zeros(X.shape[1:])
    for k in range(ks, kt + 1):
        Xk = X[k]
        w = indicator(Xk)
        _, d1, d2 = test.phi_derivs(Xk)
        g = d2
        if kernel.family != "zero":
            g = d2 + d1 * (_weighted_sums(kernel, times[k], Xk, w) / N)
        # trapezoid weights on a possibly non-uniform grid
        left = times[k] - times[k - 1] if k > ks else 0.0
        right = times[k + 1] - times[k] if k < kt else 0.0
        integral += 0.5 * (left + right) * (w * g)
    return np.mean(Phi * (f_t - f_s - integral), axis=1)


def theta_functional(paths: ParticlePaths, test: TestFunctionSpec, s: float, t: float,
                     kernel: KernelSpec | None = None) -> float:
    """Functional on ``paths`` with the exact indicator of positivity.

    ``kernel`` defaults to the kernel the paths were simulated with.
    """
    kernel = paths.config.kernel if kernel is None else kernel
    return float(theta_batch(paths.positions, paths.times, kernel, test, s, t)[0])


def theta_regularized(paths: ParticlePaths, test: TestFunctionSpec, s: float, t: float, eta: float,
                      kernel: KernelSpec | None = None) -> float:
    """As ``theta_functional`` with every indicator replaced by ``smooth_indicator(eta, .)``."""
    kernel = paths.config.kernel if kernel is None else kernel
    return float(theta_batch(paths.positions, paths.times, kernel, test, s, t,
                             indicator=lambda x: smooth_indicator(eta, x))[0])


def occupation_fraction(positions, times, s: float, t: float, eta: float):
    """``int_s^t (1/N) sum_i |iota(x^i_u) - f_eta(x^i_u)| du`` (trapezoid), per run."""
    X = np.asarray(positions, dtype=float)
    if X.ndim == 2:
        X = X[:, None, :]
    times = np.asarray(times)
    ks, kt = _grid_index(times, s), _grid_index(times, t)
    gap = np.mean(np.abs(_indicator(X[ks : kt + 1]) - smooth_indicator(eta, X[ks : kt + 1])), axis=2)
    tt = times[ks : kt + 1]
    return np.sum(0.5 * np.diff(tt)[:, None] * (gap[1:] + gap[:-1]), axis=0)


def regularization_bound(test: TestFunctionSpec, kernel: KernelSpec):
    """``A = |Phi| (|phi''| + 2 |phi'| |b|)`` bounding ``|Theta_eta - Theta|`` per unit occupation."""
    n = test.norms
    return n["Phi"] * (n["d2phi"] + 2.0 * n["dphi"] * kernel.sup_bound)
