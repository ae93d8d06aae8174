"""Mean-field limit as a fixed point of the freeze-and-solve map.

For an input pair ``(mu, f)``, where ``mu_t = (1 - beta(t)) delta_0 + u(t, .) dx`` is
a flow of laws and ``f`` a survival curve, the map freezes the drift

    B(t, x) = int b(t, x, y) mu_t(dy) - b(t, x, 0) (1 - f(t))

and returns the killed law of the resulting linear diffusion together with
its survival curve.  The limit law is a fixed point; it is computed here by
(optionally damped) Picard iteration started from the stopped Brownian flow.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError
from .fpe.images import images_density, images_survival
from .fpe.solver import FpeConfig, FrozenDrift, solve_linear_fpe
from .kernels import KernelSpec, drift_rows, eval_kernel
from .measures import DensityFlow, SurvivalCurve, flow_distance_dT

__all__ = [
    "FlowPair",
    "PicardResult",
    "frozen_drift_table",
    "gamma_operator",
    "picard_solve",
    "fixed_point_residual",
    "contraction_ratio",
    "stopped_bm_oracle",
    "stopped_bm_pair",
]


@dataclass(frozen=True, eq=False)
class FlowPair:
    """A flow of sub-probability densities with a separate survival curve."""

    flow: DensityFlow
    survival: SurvivalCurve

    def __post_init__(self):
        if not np.array_equal(self.flow.time_grid, self.survival.time_grid):
            raise ConfigError("flow and survival curve must share the time grid")

    @classmethod
    def from_flow(cls, flow: DensityFlow) -> "FlowPair":
        return cls(flow, flow.survival)

    @property
    def time_grid(self):
        return self.flow.time_grid

    def mix(self, other: "FlowPair", lam: float) -> "FlowPair":
        """Pointwise ``(1 - lam) self + lam other``."""
        if lam == 1.0:
            return other
        f, g = self.flow, other.flow
        flow = DensityFlow(f.time_grid, f.space_grid, (1 - lam) * f.u + lam * g.u,
                           (1 - lam) * f.beta + lam * g.beta)
        surv = SurvivalCurve(f.time_grid, (1 - lam) * self.survival.alpha + lam * other.survival.alpha)
        return FlowPair(flow, surv)

    def distance(self, other: "FlowPair") -> float:
        """``sup_t W1(mu_t, nu_t) + sup_t |f(t) - g(t)|``."""
        return flow_distance_dT(self.flow, other.flow, self.survival, other.survival)

    def to_csv(self, out_dir: str) -> None:
        """``density.csv`` and ``survival.csv`` of the flow, plus ``f.csv`` (``t,f``)."""
        self.flow.to_csv(out_dir)
        with open(os.path.join(out_dir, "f.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "f"])
            for t, a in zip(self.survival.time_grid, self.survival.alpha):
                w.writerow([repr(float(t)), repr(float(a))])


@dataclass
class PicardResult:
    pair: FlowPair
    trace: list = field(default_factory=list)  # d_T between successive iterates
    converged: bool = True
    segments: int = 1

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def write_trace(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "d_T"])
            for i, d in enumerate(self.trace, start=1):
                w.writerow([i, repr(float(d))])


def _check_grid(pair: FlowPair, cfg: FpeConfig):
    t, x = cfg.times, cfg.x
    f = pair.flow
    if f.time_grid.shape != t.shape or not np.allclose(f.time_grid, t, rtol=0, atol=1e-12):
        raise ConfigError("input time grid does not match the solver configuration")
    if f.space_grid.shape != x.shape or not np.allclose(f.space_grid, x, rtol=0, atol=1e-12):
        raise ConfigError("input space grid does not match the solver configuration")


def frozen_drift_table(pair: FlowPair, kernel: KernelSpec) -> FrozenDrift:
    """``B(t_k, x_j, mu_{t_k}, f(t_k))`` on the pair's grid."""
    fl = pair.flow
    t, x = fl.time_grid, fl.space_grid
    B = drift_rows(kernel, t, x, fl.u)
    # atom at 0 carries mass 1 - beta; the correction removes b(t, x, 0) (1 - f)
    shift = pair.survival.alpha - fl.beta
    if kernel.time_dependent:
        b0 = np.stack([eval_kernel(kernel, tk, x, 0.0) for tk in t])
    else:
        b0 = np.broadcast_to(eval_kernel(kernel, 0.0, x, 0.0), B.shape)
    if np.any(shift != 0):
        B = B + b0 * shift[:, None]
    sup = float(np.max(np.abs(B), initial=0.0))
    return FrozenDrift(t, x, B, sup)


def gamma_operator(pair: FlowPair, kernel: KernelSpec, cfg: FpeConfig) -> FlowPair:
    """Freeze the drift at ``pair`` and return the killed law it generates.

    The output survival curve is the output flow's mass.
    """
    _check_grid(pair, cfg)
    drift = frozen_drift_table(pair, kernel)
    return FlowPair.from_flow(solve_linear_fpe(cfg, drift))


def stopped_bm_pair(cfg: FpeConfig) -> FlowPair:
    """The zero-interaction solution on ``cfg``'s grid."""
    return FlowPair.from_flow(solve_linear_fpe(cfg, FrozenDrift.constant(0.0, cfg.times, cfg.x)))


def fixed_point_residual(pair: FlowPair, kernel: KernelSpec, cfg: FpeConfig) -> float:
    """``d_T(pair, Gamma(pair))``."""
    return pair.distance(gamma_operator(pair, kernel, cfg))


def contraction_ratio(pair_a: FlowPair, pair_b: FlowPair, kernel: KernelSpec, cfg: FpeConfig) -> float:
    """``d_T(Gamma a, Gamma b) / d_T(a, b)``."""
    d = pair_a.distance(pair_b)
    if d == 0:
        raise ConfigError("the two inputs coincide")
    return gamma_operator(pair_a, kernel, cfg).distance(gamma_operator(pair_b, kernel, cfg)) / d


def _iterate(kernel, cfg, tol, max_iter, damping, start=None):
    x = stopped_bm_pair(cfg) if start is None else start
    trace = []
    for _ in range(max_iter):
        y = gamma_operator(x, kernel, cfg)
        d = y.distance(x)
        trace.append(d)
        x = x.mix(y, damping)
        if d < tol:
            return x, trace, True
        if not np.isfinite(d):
            break
    return x, trace, False


def _concat(pairs, t):
    """Join consecutive segments on the full grid ``t`` (segment grids differ by rounding)."""
    first = pairs[0]
    u = np.concatenate([first.flow.u] + [p.flow.u[1:] for p in pairs[1:]])
    beta = np.concatenate([first.flow.beta] + [p.flow.beta[1:] for p in pairs[1:]])
    f = np.concatenate([first.survival.alpha] + [p.survival.alpha[1:] for p in pairs[1:]])
    return FlowPair(DensityFlow(t, first.flow.space_grid, u, beta), SurvivalCurve(t, f))


def _solve_segments(kernel, cfg, tol, max_iter, damping, n_seg):
    n = cfg.n_steps
    if n % n_seg:
        raise ConvergenceError(f"cannot split {n} time steps into {n_seg} equal segments")
    seg_cfg = cfg.replace(horizon=cfg.horizon / n_seg)
    pairs, trace = [], []
    for i in range(n_seg):
        if i:
            prev = pairs[-1]
            seg_cfg = cfg.replace(horizon=cfg.horizon / n_seg, t0=float(prev.time_grid[-1]),
                                  rho=prev.flow.u[-1], initial_mass=float(prev.flow.beta[-1]))
        x, tr, ok = _iterate(kernel, seg_cfg, tol, max_iter, damping)
        trace.extend(tr)
        if not ok:
            return None, trace
        pairs.append(x)
    return _concat(pairs, cfg.times), trace


def picard_solve(kernel: KernelSpec, cfg: FpeConfig, tol: float = 1e-8, max_iter: int = 50,
                 damping: float = 1.0, max_splits: int = 3) -> PicardResult:
    """Fixed point of the freeze-and-solve map by Picard iteration.

    Parameters
    ----------
    kernel : KernelSpec
    cfg : FpeConfig
    tol : float
        Stop once ``d_T`` between successive iterates drops below ``tol``.
    max_iter : int
        Iterations allowed per horizon segment.
    damping : float
        ``lam`` in ``x <- (1 - lam) x + lam Gamma(x)``; 1 is plain Picard.
    max_splits : int
        If the iteration fails, the horizon is cut into 2, 4, ... equal
        segments solved one after the other, up to ``2**max_splits``.

    Returns
    -------
    PicardResult
        ``trace`` holds ``d_T`` per iteration over all attempts.

    Raises
    ------
    ConvergenceError
        When even the finest split does not converge.
    """
    if not tol > 0:
        raise ConfigError("tol must be positive")
    if not 0 < damping <= 1:
        raise ConfigError("damping must lie in (0, 1]")
    x, trace, ok = _iterate(kernel, cfg, tol, max_iter, damping)
    if ok:
        return PicardResult(x, trace, True, 1)
    full_trace = list(trace)
    for level in range(1, max_splits + 1):
        n_seg = 2**level
        if cfg.n_steps % n_seg:
            break
        pair, tr = _solve_segments(kernel, cfg, tol, max_iter, damping, n_seg)
        full_trace.extend(tr)
        if pair is not None:
            return PicardResult(pair, full_trace, True, n_seg)
    last = full_trace[-1] if full_trace else None
    raise ConvergenceError(
        f"Picard iteration did not reach tol {tol:g} (last d_T = {last}); "
        "try damping < 1 or a shorter horizon", last_distance=last, trace=full_trace)


def stopped_bm_oracle(z: float, t: float):
    """Survival probability and killed density of ``z + sqrt(2) W`` at time ``t``.

    Returns ``(alpha, density)`` with ``alpha = erf(z / (2 sqrt t))`` and
    ``density(y) = G_t(y - z) - G_t(y + z)``.
    """
    if not (z > 0 and t > 0):
        raise ConfigError("z and t must be positive")
    alpha = float(images_survival(z, t))
    return alpha, (lambda y: images_density(z, t, y))
