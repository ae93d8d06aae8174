"""Measures on the half-line with an atom at 0, and the metrics between them.

Two concrete measure types are used:

* ``EmpiricalMeasure`` -- N atoms of weight 1/N (absorbed particles sit at 0);
* ``GridMeasure`` -- an atom of mass ``atom`` at 0 plus a nodal density on a
  grid.  Its CDF is the linear interpolant of the cumulative trapezoid sums.

``w1_distance`` integrates ``|F_a - F_b|`` exactly for these piecewise-linear
(possibly jumping) CDFs.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import MeasureError

__all__ = [
    "EmpiricalMeasure",
    "GridMeasure",
    "DensityFlow",
    "SurvivalCurve",
    "w1_distance",
    "w1_sorted",
    "flow_distance_dT",
    "empirical_at",
    "holder_seminorm",
    "recommended_x_max",
]

MASS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    atoms: np.ndarray

    def __post_init__(self):
        a = np.sort(np.asarray(self.atoms, dtype=float).ravel())
        if a.size == 0:
            raise MeasureError("empirical measure needs at least one atom")
        if a[0] < 0:
            raise MeasureError("atoms must be non-negative")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @property
    def n(self) -> int:
        return self.atoms.size

    @property
    def weight(self) -> float:
        return 1.0 / self.atoms.size

    @property
    def mass(self) -> float:
        return 1.0

    @property
    def atom_at_zero(self) -> float:
        return np.count_nonzero(self.atoms == 0) / self.n

    def __eq__(self, other):
        return isinstance(other, EmpiricalMeasure) and np.array_equal(self.atoms, other.atoms)

    def cdf(self, x):
        return np.searchsorted(self.atoms, x, side="right") / self.n

    def cdf_left(self, x):
        return np.searchsorted(self.atoms, x, side="left") / self.n

    def knots(self):
        return self.atoms

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("x\n")
            for v in self.atoms:
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path: str) -> "EmpiricalMeasure":
        return cls(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=1))


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """``atom * delta_0 + u(x) dx`` with ``u`` given at the nodes ``x``."""

    x: np.ndarray
    u: np.ndarray
    atom: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if x.shape != u.shape or x.ndim != 1 or x.size < 2:
            raise MeasureError("grid measure needs matching 1-d node and value arrays")
        if x[0] < 0 or np.any(np.diff(x) <= 0):
            raise MeasureError("grid nodes must be increasing and non-negative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(x) * (u[1:] + u[:-1]) / 2)])
        object.__setattr__(self, "_cum", self.atom + cum)

    @property
    def mass(self) -> float:
        return float(self._cum[-1])

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.0, np.interp(x, self.x, self._cum))

    cdf_left = cdf  # continuous on (0, inf)

    def knots(self):
        return self.x


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    time_grid: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.time_grid, dtype=float)
        a = np.asarray(self.alpha, dtype=float)
        if t.shape != a.shape:
            raise MeasureError("survival curve and time grid differ in length")
        if np.any(a < -1e-12) or np.any(a > 1 + 1e-12):
            raise MeasureError("survival values must lie in [0, 1]")
        object.__setattr__(self, "time_grid", t)
        object.__setattr__(self, "alpha", a)


@dataclass(frozen=True, eq=False)
class DensityFlow:
    """Grid function ``u(t_k, x_j)`` plus survival ``beta(t_k)``.

    Represents ``mu_t = (1 - beta(t)) delta_0 + u(t, x) dx``.
    """

    time_grid: np.ndarray
    space_grid: np.ndarray
    u: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.time_grid, dtype=float)
        x = np.asarray(self.space_grid, dtype=float)
        u = np.asarray(self.u, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        if u.shape != (t.size, x.size) or b.shape != t.shape:
            raise MeasureError(f"density shape {u.shape} does not match grids ({t.size}, {x.size})")
        if x[0] != 0:
            raise MeasureError("space grid must start at 0")
        for name, arr in (("time_grid", t), ("space_grid", x), ("u", u), ("beta", b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def h(self) -> float:
        return float(self.space_grid[1] - self.space_grid[0])

    @property
    def survival(self) -> SurvivalCurve:
        return SurvivalCurve(self.time_grid, self.beta)

    def marginal(self, k: int) -> GridMeasure:
        return GridMeasure(self.space_grid, self.u[k], 1.0 - float(self.beta[k]))

    def time_index(self, t: float) -> int:
        return _grid_index(self.time_grid, t)

    def to_csv(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "density.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [repr(float(v)) for v in self.space_grid])
            for tk, row in zip(self.time_grid, self.u):
                w.writerow([repr(float(tk))] + [repr(float(v)) for v in row])
        with open(os.path.join(out_dir, "survival.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "beta"])
            for tk, bk in zip(self.time_grid, self.beta):
                w.writerow([repr(float(tk)), repr(float(bk))])

    @classmethod
    def from_csv(cls, out_dir: str) -> "DensityFlow":
        with open(os.path.join(out_dir, "density.csv")) as fh:
            header = next(csv.reader(fh))
        x = np.array([float(v) for v in header[1:]])
        dens = np.loadtxt(os.path.join(out_dir, "density.csv"), delimiter=",", skiprows=1, ndmin=2)
        surv = np.loadtxt(os.path.join(out_dir, "survival.csv"), delimiter=",", skiprows=1, ndmin=2)
        if not np.array_equal(dens[:, 0], surv[:, 0]):
            raise MeasureError("density.csv and survival.csv disagree on the time grid")
        return cls(dens[:, 0], x, dens[:, 1:], surv[:, 1])


def _grid_index(grid, t, rtol=1e-9):
    grid = np.asarray(grid)
    k = int(np.argmin(np.abs(grid - t)))
    if abs(grid[k] - t) > rtol * max(1.0, abs(grid[-1])):
        raise MeasureError(f"time {t} is not on the grid")
    return k


# ---------------------------------------------------------------------------
# Wasserstein-1


def _abs_linear_integral(d0, d1, length):
    """Exact integral of ``|d|`` for ``d`` linear from ``d0`` to ``d1`` over ``length``."""
    d0 = np.asarray(d0, dtype=float)
    d1 = np.asarray(d1, dtype=float)
    same = d0 * d1 >= 0
    a0, a1 = np.abs(d0), np.abs(d1)
    denom = np.where(same, 1.0, a0 + a1)
    return np.where(same, 0.5 * (a0 + a1) * length, 0.5 * (d0 * d0 + d1 * d1) / denom * length)


def w1_sorted(a, b) -> float:
    """W1 between two equal-size samples: mean absolute difference of order statistics."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise MeasureError("samples differ in size")
    return float(np.mean(np.abs(a - b)))


def _check_mass(m):
    if abs(m.mass - 1.0) > MASS_TOL:
        raise MeasureError(f"measure has mass {m.mass}, expected 1")


def w1_distance(a, b) -> float:
    """Order-1 Wasserstein distance between two measures on ``[0, inf)``."""
    for m in (a, b):
        _check_mass(m)
    if isinstance(a, EmpiricalMeasure) and isinstance(b, EmpiricalMeasure) and a.n == b.n:
        return w1_sorted(a.atoms, b.atoms)
    if isinstance(a, GridMeasure) and isinstance(b, GridMeasure) and np.array_equal(a.x, b.x):
        return float(_grid_w1(a.x, a._cum[None, :], b._cum[None, :])[0])
    X = np.union1d(a.knots(), b.knots())
    X = np.union1d(X, [0.0])
    # right values at the left end of each piece, left limits at the right end
    d0 = a.cdf(X[:-1]) - b.cdf(X[:-1])
    d1 = a.cdf_left(X[1:]) - b.cdf_left(X[1:])
    return float(np.sum(_abs_linear_integral(d0, d1, np.diff(X))))


def _grid_w1(x, Fa, Fb):
    D = Fa - Fb
    return np.sum(_abs_linear_integral(D[:, :-1], D[:, 1:], np.diff(x)[None, :]), axis=1)


def flow_distance_dT(flow_a: DensityFlow, flow_b: DensityFlow, survival_a=None, survival_b=None) -> float:
    """``sup_t W1(mu_t, nu_t) + sup_t |f(t) - g(t)|`` over the shared time grid.

    Survival curves default to each flow's own ``beta``.
    """
    if flow_a.time_grid.shape != flow_b.time_grid.shape or not np.allclose(
        flow_a.time_grid, flow_b.time_grid, rtol=0, atol=1e-12
    ):
        raise MeasureError("flows live on different time grids")
    fa, fb = (
        f.beta if s is None else np.asarray(getattr(s, "alpha", s), dtype=float)
        for f, s in ((flow_a, survival_a), (flow_b, survival_b))
    )
    return w1_flow_sup(flow_a, flow_b) + float(np.max(np.abs(fa - fb)))


def w1_flow_sup(flow_a: DensityFlow, flow_b: DensityFlow, chunk: int = 128) -> float:
    """``sup_k W1(mu_{t_k}, nu_{t_k})`` over a shared time grid."""
    if np.array_equal(flow_a.space_grid, flow_b.space_grid):
        best = 0.0
        for lo in range(0, flow_a.time_grid.size, chunk):
            sl = slice(lo, lo + chunk)
            Fa = _cum_rows_slice(flow_a, sl)
            Fb = _cum_rows_slice(flow_b, sl)
            for F in (Fa, Fb):
                if np.any(np.abs(F[:, -1] - 1.0) > MASS_TOL):
                    raise MeasureError("flow marginal does not have unit mass")
            best = max(best, float(np.max(_grid_w1(flow_a.space_grid, Fa, Fb))))
        return best
    return max(
        w1_distance(flow_a.marginal(k), flow_b.marginal(k)) for k in range(flow_a.time_grid.size)
    )


def _cum_rows_slice(flow, sl):
    x = flow.space_grid
    U = flow.u[sl]
    cum = np.zeros_like(U)
    np.cumsum(np.diff(x)[None, :] * (U[:, 1:] + U[:, :-1]) / 2, axis=1, out=cum[:, 1:])
    return (1.0 - flow.beta[sl])[:, None] + cum


def empirical_at(paths, t: float) -> EmpiricalMeasure:
    """Empirical measure of the particle positions at grid time ``t``."""
    try:
        k = _grid_index(paths.times, t)
    except MeasureError:
        raise MeasureError(f"time {t} is off the simulation grid") from None
    return EmpiricalMeasure(paths.positions[k])


def holder_seminorm(curve, exponent: float, chunk: int = 512) -> float:
    """``max_{s<t} |f(t) - f(s)| / |t - s|^exponent`` over grid pairs."""
    if isinstance(curve, SurvivalCurve):
        t, f = curve.time_grid, curve.alpha
    else:
        t, f = (np.asarray(a, dtype=float) for a in curve)
    if not 0 < exponent <= 1:
        raise MeasureError("exponent must lie in (0, 1]")
    if t.size < 2:
        raise MeasureError("need at least two grid points")
    best = 0.0
    for lo in range(0, t.size, chunk):
        ti, fi = t[lo : lo + chunk, None], f[lo : lo + chunk, None]
        dt = np.abs(t[None, :] - ti)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(dt > 0, np.abs(f[None, :] - fi) / dt**exponent, 0.0)
        best = max(best, float(q.max()))
    return best


def recommended_x_max(z_max: float, horizon: float, sup_bound: float = 0.0, n_sd: float = 8.0) -> float:
    """Right end of the truncated domain leaving negligible Gaussian tail mass."""
    return z_max + n_sd * np.sqrt(2.0 * horizon) + sup_bound * horizon
