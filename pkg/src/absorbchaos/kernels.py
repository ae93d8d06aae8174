"""Interaction kernels and the drift functionals built from them.

A kernel ``b(t, x, y)`` gives the drift felt by a particle at ``x`` from an
active particle at ``y``.  Absorbed particles sit at 0 and never contribute,
so every functional here integrates over ``(0, inf)`` only.

Summation order
---------------
Empirical drifts sum the contributions of active source particles in
ascending order of position.  That order is a function of the configuration
alone, which makes the particle simulation exactly permutation-equivariant in
floating point, and it is the order used by the brute-force reference loops
in the test-suite.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numba as nb
import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve

from .errors import KernelError

__all__ = [
    "FAMILIES",
    "KernelSpec",
    "SmoothIndicatorParam",
    "eval_kernel",
    "validate_bound",
    "density_drift",
    "drift_functional",
    "mean_field_drift",
    "drift_rows",
    "empirical_drift",
    "empirical_drifts",
    "smooth_indicator",
    "trapezoid_weights",
]

# family -> number of parameters
FAMILIES = {
    "zero": 0,
    "constant": 1,  # [c]
    "separable-product": 3,  # [c, a, b]: c exp(-a x^2) exp(-b y^2)
    "rational-attractive": 2,  # [c, ell]: c / (1 + ((x - y)/ell)^2)
    "tabulated": 0,  # grid read from `table`
}


@dataclass(frozen=True)
class KernelSpec:
    """Declarative description of an interaction kernel.

    Parameters
    ----------
    family : str
        One of ``FAMILIES``.
    params : tuple of float
        Family parameters, see ``FAMILIES``.
    sup_bound : float
        Declared value of ``sup |b|``.
    holder_exponent : float
        Declared Hölder regularity in (0, 1].
    table : str, optional
        CSV file with header ``t,x,y,b`` on a full tensor grid (tabulated only).
    """

    family: str
    params: tuple = ()
    sup_bound: float = 0.0
    holder_exponent: float = 1.0
    table: str | None = None
    _grid: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise KernelError(f"unknown kernel family {self.family!r}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        if len(params) != FAMILIES[self.family]:
            raise KernelError(
                f"{self.family} kernel takes {FAMILIES[self.family]} parameters, got {len(params)}"
            )
        if not (self.sup_bound >= 0 and math.isfinite(self.sup_bound)):
            raise KernelError("sup_bound must be finite and non-negative")
        if not 0 < self.holder_exponent <= 1:
            raise KernelError("holder_exponent must lie in (0, 1]")
        if self.family == "zero" and self.sup_bound != 0:
            raise KernelError("the zero kernel must declare sup_bound = 0")
        if self.family in ("constant", "separable-product", "rational-attractive"):
            if abs(params[0]) > self.sup_bound:
                raise KernelError(f"|c| = {abs(params[0])} exceeds declared sup_bound {self.sup_bound}")
        if self.family == "separable-product" and (params[1] < 0 or params[2] < 0):
            raise KernelError("separable-product decay rates must be non-negative")
        if self.family == "rational-attractive" and params[1] <= 0:
            raise KernelError("rational-attractive length scale must be positive")
        if self.family == "tabulated":
            if not self.table:
                raise KernelError("tabulated kernel needs a table path")
            grid = _load_table(os.path.abspath(self.table))
            if grid.max_abs > self.sup_bound:
                raise KernelError("tabulated values exceed declared sup_bound")
            object.__setattr__(self, "_grid", grid)

    @property
    def time_dependent(self) -> bool:
        return self.family == "tabulated"

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "params": list(self.params),
            "sup_bound": self.sup_bound,
            "holder_exponent": self.holder_exponent,
        }
        if self.table is not None:
            d["table"] = self.table
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "KernelSpec":
        try:
            table = d.get("table")
            if table is not None and base_dir is not None and not os.path.isabs(table):
                table = os.path.join(base_dir, table)
            return cls(
                family=d["family"],
                params=tuple(d.get("params", ())),
                sup_bound=float(d["sup_bound"]),
                holder_exponent=float(d.get("holder_exponent", 1.0)),
                table=table,
            )
        except KeyError as exc:
            raise KernelError(f"kernel JSON is missing field {exc}") from None

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path: str) -> "KernelSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), base_dir=os.path.dirname(os.path.abspath(path)))

    # convenience constructors
    @classmethod
    def zero(cls):
        return cls("zero", (), 0.0)

    @classmethod
    def constant(cls, c: float):
        return cls("constant", (c,), abs(c))

    @classmethod
    def rational(cls, c: float = 1.0, ell: float = 1.0):
        return cls("rational-attractive", (c, ell), abs(c))

    @classmethod
    def separable(cls, c: float, a: float, b: float):
        return cls("separable-product", (c, a, b), abs(c))


@dataclass(frozen=True)
class SmoothIndicatorParam:
    eta: float

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise KernelError("eta must lie in (0, 1]")


class _Table:
    def __init__(self, t, x, y, values):
        self.axes = (t, x, y)
        self.values = values
        self.max_abs = float(np.max(np.abs(values)))
        self.interp = RegularGridInterpolator((t, x, y), values, method="linear")

    def __call__(self, t, x, y):
        t, x, y = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (t, x, y)))
        pts = np.stack(
            [np.clip(a, ax[0], ax[-1]) for a, ax in zip((t, x, y), self.axes)], axis=-1
        )
        return self.interp(pts.reshape(-1, 3)).reshape(t.shape)


@lru_cache(maxsize=16)
def _load_table(path: str) -> _Table:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            if header != ["t", "x", "y", "b"]:
                raise KernelError(f"kernel table header must be t,x,y,b, got {header}")
            rows = np.array([[float(v) for v in row] for row in reader if row])
    except OSError as exc:
        raise KernelError(f"cannot read kernel table: {exc}") from None
    axes = [np.unique(rows[:, k]) for k in range(3)]
    if any(len(a) < 2 for a in axes):
        raise KernelError("kernel table needs at least two nodes per axis")
    shape = tuple(len(a) for a in axes)
    if rows.shape[0] != np.prod(shape):
        raise KernelError("kernel table is not a full tensor grid")
    idx = tuple(np.searchsorted(a, rows[:, k]) for k, a in enumerate(axes))
    values = np.full(shape, np.nan)
    values[idx] = rows[:, 3]
    if np.isnan(values).any():
        raise KernelError("kernel table has duplicate or missing nodes")
    return _Table(*axes, values)


def eval_kernel(spec: KernelSpec, t, x, y):
    """Evaluate ``b(t, x, y)`` with numpy broadcasting."""
    if np.any(np.asarray(t) < 0):
        raise KernelError("kernel evaluated at negative time")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fam, p = spec.family, spec.params
    if fam == "zero":
        out = np.zeros(np.broadcast(np.asarray(t), x, y).shape)
    elif fam == "constant":
        out = np.full(np.broadcast(np.asarray(t), x, y).shape, p[0])
    elif fam == "separable-product":
        out = p[0] * np.exp(-p[1] * x * x) * np.exp(-p[2] * y * y)
        out = np.broadcast_to(out, np.broadcast(np.asarray(t), out).shape)
    elif fam == "rational-attractive":
        d = (x - y) / p[1]
        out = p[0] / (1.0 + d * d)
        out = np.broadcast_to(out, np.broadcast(np.asarray(t), out).shape)
    else:
        out = spec._grid(t, x, y)
    return out[()] if out.ndim == 0 else out


def validate_bound(spec: KernelSpec, n_probe: int = 100_000, seed: int = 0, horizon: float = 10.0):
    """Probe ``|b| <= sup_bound`` at random points; raise KernelError on violation."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, horizon, n_probe)
    # half the probes near the boundary, half spread out
    x = np.where(rng.random(n_probe) < 0.5, rng.exponential(0.5, n_probe), rng.uniform(-5, 25, n_probe))
    y = np.where(rng.random(n_probe) < 0.5, rng.exponential(0.5, n_probe), rng.uniform(-5, 25, n_probe))
    vals = np.abs(eval_kernel(spec, t, x, y))
    worst = float(np.max(vals))
    if worst > spec.sup_bound:
        raise KernelError(f"probe found |b| = {worst} > declared sup_bound {spec.sup_bound}")
    return worst


# ---------------------------------------------------------------------------
# drift functionals against grid densities


def trapezoid_weights(y):
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise KernelError("need at least two quadrature nodes")
    dy = np.diff(y)
    w = np.zeros_like(y)
    w[:-1] += dy / 2
    w[1:] += dy / 2
    return w


def _uniform_step(y):
    dy = np.diff(y)
    h = dy[0]
    if np.allclose(dy, h, rtol=1e-9, atol=0):
        return h
    return None


def _toeplitz_rows(spec, y, WU):
    """Rows of sum_l b(x_j - y_l) WU[:, l] for x = y on a uniform grid."""
    h = _uniform_step(y)
    J = y.size - 1
    offsets = np.arange(-J, J + 1) * h
    c, ell = spec.params
    d = offsets / ell
    kv = c / (1.0 + d * d)
    full = fftconvolve(WU, kv[None, :], mode="full", axes=1)
    return full[:, J : 2 * J + 1]


def _dense_rows(spec, t, x, y, WU, chunk=256):
    out = np.empty((WU.shape[0], x.size))
    for lo in range(0, x.size, chunk):
        K = eval_kernel(spec, t, x[lo : lo + chunk, None], y[None, :])
        out[:, lo : lo + chunk] = WU @ K.T
    return out


def density_drift(spec: KernelSpec, t: float, x, y, u):
    """``int_0^inf b(t, x, y') u(y') dy'`` by the trapezoid rule on the nodes ``y``."""
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if u.shape != y.shape:
        raise KernelError("density values and nodes differ in shape")
    w = trapezoid_weights(y)
    fam, p = spec.family, spec.params
    if fam == "zero":
        out = np.zeros(x.shape)
    elif fam == "constant":
        out = np.full(x.shape, p[0] * float(np.dot(w, u)))
    elif fam == "separable-product":
        out = p[0] * np.exp(-p[1] * x * x) * float(np.dot(w, np.exp(-p[2] * y * y) * u))
    elif fam == "rational-attractive" and x.shape == y.shape and np.array_equal(x, y) and _uniform_step(y):
        out = _toeplitz_rows(spec, y, (w * u)[None, :])[0]
    else:
        out = _dense_rows(spec, t, x, y, (w * u)[None, :])[0]
    return float(out[0]) if scalar else out


def drift_functional(spec: KernelSpec, t: float, x, y, u, atom: float, a: float):
    """``B(t, x, lambda, a)`` for ``lambda = atom * delta_0 + u dy``.

    Equals ``int b(t,x,y) lambda(dy) - b(t,x,0) (1 - a)``.
    """
    b0 = eval_kernel(spec, t, x, 0.0)
    return density_drift(spec, t, x, y, u) + b0 * atom - b0 * (1.0 - a)


def mean_field_drift(spec: KernelSpec, t: float, x, y, u, beta: float, atol: float = 1e-6):
    """Mean-field drift at ``mu_t = (1 - beta) delta_0 + u dy``.

    The atom at 0 cancels the correction term of the drift functional, so the
    result is the integral of ``b`` against the density part alone.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise KernelError("density has negative values")
    if not 0 <= beta <= 1:
        raise KernelError("beta must lie in [0, 1]")
    mass = float(np.dot(trapezoid_weights(y), u))
    if abs(mass - beta) > atol:
        raise KernelError(f"density mass {mass} does not match beta {beta}")
    return density_drift(spec, t, x, y, u)


def drift_rows(spec: KernelSpec, times, y, U, chunk=64):
    """Batched ``density_drift`` with ``x = y`` for every row of ``U``.

    ``U`` has one density per time in ``times``; returns an array shaped like ``U``.
    """
    y = np.asarray(y, dtype=float)
    U = np.atleast_2d(np.asarray(U, dtype=float))
    times = np.broadcast_to(np.asarray(times, dtype=float), (U.shape[0],))
    w = trapezoid_weights(y)
    WU = U * w
    fam, p = spec.family, spec.params
    if fam == "zero":
        return np.zeros_like(U)
    if fam == "constant":
        return np.repeat((p[0] * WU.sum(axis=1))[:, None], y.size, axis=1)
    if fam == "separable-product":
        return p[0] * np.outer(WU @ np.exp(-p[2] * y * y), np.exp(-p[1] * y * y))
    out = np.empty_like(U)
    for lo in range(0, U.shape[0], chunk):
        sl = slice(lo, lo + chunk)
        if fam == "rational-attractive" and _uniform_step(y):
            out[sl] = _toeplitz_rows(spec, y, WU[sl])
        else:
            for r in range(lo, min(lo + chunk, U.shape[0])):
                out[r] = _dense_rows(spec, times[r], y, y, WU[r : r + 1])[0]
    return out


# ---------------------------------------------------------------------------
# empirical drifts


@nb.njit(nogil=True, cache=True)
def _rational_sums(xt, xs, c, ell, out):  # pragma: no cover - compiled
    for i in range(xt.shape[0]):
        s = 0.0
        xi = xt[i]
        for j in range(xs.shape[0]):
            d = (xi - xs[j]) / ell
            s += c / (1.0 + d * d)
        out[i] = s


def _pair_sums(spec, t, xt, xs, threads=1, chunk=512):
    """``sum_j b(t, xt[i], xs[j])`` summed sequentially over ``j`` in the given order."""
    out = np.empty(xt.size)
    if xt.size == 0:
        return out
    bounds = [(lo, min(lo + chunk, xt.size)) for lo in range(0, xt.size, chunk)]
    if spec.family == "rational-attractive":
        c, ell = spec.params

        def work(b):
            _rational_sums(xt[b[0] : b[1]], xs, c, ell, out[b[0] : b[1]])

    else:

        def work(b):
            # reduction over a non-contiguous axis 0 runs row by row, i.e. sequentially in j
            K = eval_kernel(spec, t, xt[None, b[0] : b[1]], xs[:, None])
            out[b[0] : b[1]] = np.add.reduce(np.ascontiguousarray(K), axis=0) if xs.size else 0.0

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(work, bounds))
    else:
        for b in bounds:
            work(b)
    return out


def empirical_drift(spec: KernelSpec, t: float, i: int, positions) -> float:
    """``(1/N) sum_j b(t, x_i, x_j) 1{x_j > 0}`` for the particle with index ``i`` (0-based)."""
    x = np.asarray(positions, dtype=float)
    if x.size == 0:
        raise KernelError("empty position vector")
    if not 0 <= i < x.size:
        raise KernelError(f"particle index {i} out of range for N = {x.size}")
    return float(empirical_drifts(spec, t, x, targets=np.array([i]))[i])


def empirical_drifts(spec: KernelSpec, t: float, positions, targets=None, sources=None,
                     n_total=None, threads: int = 1):
    """Empirical drifts for many particles at once.

    Parameters
    ----------
    positions : array (N,)
        Snapshot; a particle is active iff its position is > 0.
    targets : index array, optional
        Particles whose drift is wanted (default all); other entries are 0.
    sources : boolean mask, optional
        Particles allowed to contribute (default all); inactive ones never do.
    n_total : int, optional
        Normalising count, defaults to ``N``.
    """
    x = np.asarray(positions, dtype=float)
    N = x.size
    if N == 0:
        raise KernelError("empty position vector")
    n_total = N if n_total is None else n_total
    active = x > 0
    src = active if sources is None else (active & sources)
    targets = np.arange(N) if targets is None else np.asarray(targets)
    out = np.zeros(N)
    if targets.size == 0:
        return out
    xt = x[targets]
    fam, p = spec.family, spec.params
    if fam == "zero":
        return out
    if fam == "constant":
        out[targets] = p[0] * (np.count_nonzero(src) / n_total)
    elif fam == "separable-product":
        xs = np.sort(x[src])
        out[targets] = p[0] * np.exp(-p[1] * xt * xt) * (np.sum(np.exp(-p[2] * xs * xs)) / n_total)
    else:
        xs = np.sort(x[src])
        out[targets] = _pair_sums(spec, t, xt, xs, threads=threads) / n_total
    return out


def smooth_indicator(eta, x):
    """C^2 step: 0 for ``x <= 0``, 1 for ``x >= eta``, smootherstep in between."""
    eta = eta.eta if isinstance(eta, SmoothIndicatorParam) else float(eta)
    if not 0 < eta <= 1:
        raise KernelError("eta must lie in (0, 1]")
    u = np.clip(np.asarray(x, dtype=float) / eta, 0.0, 1.0)
    out = u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    return out[()] if out.ndim == 0 else out
