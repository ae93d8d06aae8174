"""Finite-difference solvers for the killed Fokker-Planck equation

    du/dt = u_xx - d/dx (B(t, x) u),   u(0, x) = rho(x),   u(t, 0) = 0,

on ``[0, x_max]`` with ``u(t, x_max) = 0``.  The diffusion coefficient is 1:
the particles move with ``sqrt(2) dW``, whose generator is ``d^2/dx^2``.

Space: central second difference for diffusion, flux-form upwinding for the
advection (interface drift ``(B_j + B_{j+1}) / 2``).  The matrix is an
M-matrix, so implicit steps preserve nonnegativity.  Time: backward Euler,
or Crank-Nicolson after two backward Euler start-up steps.  The drift used
on the step ``t_n -> t_{n+1}`` is the row ``B(t_n, .)``; in the nonlinear
solver that row is built from ``u(t_n, .)``.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from ..errors import ConfigError, FpeError
from ..kernels import KernelSpec, density_drift, trapezoid_weights
from ..measures import DensityFlow, recommended_x_max
from ..particle import InitialLaw

__all__ = [
    "FpeConfig",
    "FrozenDrift",
    "solve_linear_fpe",
    "solve_nonlinear_fpe",
    "boundary_flux",
    "flux_table",
    "write_flux_csv",
]

SCHEMES = ("implicit-upwind", "crank-nicolson-upwind")
NEG_TOL = 1e-12
DIFFUSION = 1.0  # coefficient of u_xx, i.e. sigma^2 / 2 for sigma = sqrt(2)
CLIP_TOL = 1e-10


def _n_cells(length, step, what):
    n = length / step
    m = int(round(n))
    if m < 1 or abs(n - m) > 1e-9 * max(1.0, n):
        raise ConfigError(f"{what} {length} is not a multiple of its step {step}")
    return m


@dataclass(frozen=True, eq=False)
class FpeConfig:
    """Grid and initial data for a Fokker-Planck solve.

    Parameters
    ----------
    h, k : float
        Space and time steps.
    horizon : float
        Final time; must be a multiple of ``k``.
    x_max : float, optional
        Right end of the domain; rounded up to a multiple of ``h``.  The
        default leaves negligible Gaussian tail mass for drifts up to 1.
    scheme : str
        ``implicit-upwind`` or ``crank-nicolson-upwind``.
    initial_law : InitialLaw
        Initial distribution; a point mass is smeared into a truncated
        Gaussian of standard deviation ``point_width``.
    rho : array, optional
        Initial density sampled on the grid, overrides ``initial_law``.
    """

    h: float
    k: float
    horizon: float = 1.0
    x_max: float | None = None
    scheme: str = "implicit-upwind"
    initial_law: InitialLaw = field(default_factory=lambda: InitialLaw.point(1.0))
    point_width: float = 0.05
    rho: np.ndarray | None = None
    t0: float = 0.0
    initial_mass: float = 1.0

    def __post_init__(self):
        if not (self.h > 0 and self.k > 0 and self.horizon > 0):
            raise ConfigError("h, k and horizon must be positive")
        if not 0 < self.initial_mass <= 1:
            raise ConfigError("initial_mass must lie in (0, 1]")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        x_max = self.x_max
        if x_max is None:
            x_max = recommended_x_max(self.initial_law.z_max + 8 * self.point_width, self.horizon, 1.0)
        J = int(math.ceil(x_max / self.h - 1e-9))
        object.__setattr__(self, "x_max", J * self.h)
        _n_cells(self.horizon, self.k, "horizon")
        if J < 3:
            raise ConfigError("need at least three space nodes")
        if self.rho is not None:
            rho = np.array(self.rho, dtype=float)
            if rho.shape != (J + 1,):
                raise ConfigError(f"rho has {rho.size} values, grid has {J + 1} nodes")
            object.__setattr__(self, "rho", rho)

    @property
    def x(self):
        return np.arange(int(round(self.x_max / self.h)) + 1) * self.h

    @property
    def times(self):
        n = _n_cells(self.horizon, self.k, "horizon")
        return self.t0 + np.arange(n + 1) * self.k

    @property
    def n_steps(self) -> int:
        return _n_cells(self.horizon, self.k, "horizon")

    def initial_density(self):
        """Initial density on the grid: zero at both ends, trapezoid mass ``initial_mass``."""
        x = self.x
        rho = self.rho if self.rho is not None else self.initial_law.density(x, self.point_width)
        rho = np.array(rho, dtype=float)
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise ConfigError("initial density must be finite and non-negative")
        rho[0] = rho[-1] = 0.0
        mass = float(trapezoid_weights(x) @ rho)
        if not abs(mass - self.initial_mass) <= 1e-2 * self.initial_mass:
            raise ConfigError(f"initial density has mass {mass:.6g} on [0, x_max], expected {self.initial_mass:.6g}")
        return rho * (self.initial_mass / mass)

    def replace(self, **kw) -> "FpeConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return FpeConfig(**d)

    def to_dict(self) -> dict:
        d = {
            "h": self.h,
            "k": self.k,
            "horizon": self.horizon,
            "x_max": self.x_max,
            "scheme": self.scheme,
            "initial_law": self.initial_law.to_dict(),
            "point_width": self.point_width,
        }
        if self.t0 != 0.0 or self.initial_mass != 1.0:
            d["t0"] = self.t0
            d["initial_mass"] = self.initial_mass
        if self.rho is not None:
            d["rho"] = [float(v) for v in self.rho]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FpeConfig":
        try:
            return cls(
                h=float(d["h"]),
                k=float(d["k"]),
                horizon=float(d.get("horizon", 1.0)),
                x_max=None if d.get("x_max") is None else float(d["x_max"]),
                scheme=d.get("scheme", "implicit-upwind"),
                initial_law=InitialLaw.from_dict(d.get("initial_law", {"kind": "point", "params": [1.0]})),
                point_width=float(d.get("point_width", 0.05)),
                rho=d.get("rho"),
                t0=float(d.get("t0", 0.0)),
                initial_mass=float(d.get("initial_mass", 1.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid FPE config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True, eq=False)
class FrozenDrift:
    """Drift table ``B(t_k, x_j)`` on a time-space grid.

    Evaluation off the grid is bilinear, with constant extension outside it.
    """

    time_grid: np.ndarray
    space_grid: np.ndarray
    table: np.ndarray
    sup_bound: float

    def __post_init__(self):
        t = np.asarray(self.time_grid, dtype=float)
        x = np.asarray(self.space_grid, dtype=float)
        B = np.asarray(self.table, dtype=float)
        if B.shape != (t.size, x.size):
            raise ConfigError(f"drift table shape {B.shape} does not match grids ({t.size}, {x.size})")
        if not np.all(np.isfinite(B)):
            raise ConfigError("drift table has non-finite entries")
        if np.max(np.abs(B), initial=0.0) > self.sup_bound * (1 + 1e-12) + 1e-14:
            raise ConfigError("drift table exceeds its declared sup_bound")
        for name, arr in (("time_grid", t), ("space_grid", x), ("table", B)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def constant(cls, c: float, time_grid, space_grid):
        t, x = np.asarray(time_grid), np.asarray(space_grid)
        return cls(t, x, np.full((t.size, x.size), float(c)), abs(float(c)))

    @classmethod
    def zero(cls, cfg: FpeConfig):
        return cls.constant(0.0, cfg.times, cfg.x)

    @classmethod
    def from_function(cls, f, cfg: FpeConfig, sup_bound: float):
        t, x = cfg.times, cfg.x
        return cls(t, x, f(t[:, None], x[None, :]) * np.ones((t.size, x.size)), sup_bound)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.table)

    @property
    def constant_value(self):
        """The drift value if the table is constant, else ``None``."""
        v = self.table.flat[0]
        return float(v) if np.all(self.table == v) else None

    def __call__(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        c = self.constant_value
        if c is not None:
            return np.full(np.broadcast(t, x).shape, c)
        tg, xg = self.time_grid, self.space_grid
        ti = np.clip((t - tg[0]) / (tg[-1] - tg[0]) * (tg.size - 1), 0, tg.size - 1) if tg.size > 1 else t * 0
        xi = np.clip((x - xg[0]) / (xg[-1] - xg[0]) * (xg.size - 1), 0, xg.size - 1)
        i0 = np.minimum(np.floor(ti).astype(int), max(tg.size - 2, 0))
        j0 = np.minimum(np.floor(xi).astype(int), xg.size - 2)
        ft, fx = ti - i0, xi - j0
        i1 = np.minimum(i0 + 1, tg.size - 1)
        B = self.table
        return ((1 - ft) * ((1 - fx) * B[i0, j0] + fx * B[i0, j0 + 1])
                + ft * ((1 - fx) * B[i1, j0] + fx * B[i1, j0 + 1]))


# ---------------------------------------------------------------------------
# time marching


def _operator(B, h):
    """Tridiagonal generator on the interior nodes: (lower, diag, upper)."""
    Bf = 0.5 * (B[:-1] + B[1:])  # interfaces j+1/2, j = 0..J-1
    p = np.maximum(Bf, 0.0)
    m = np.minimum(Bf, 0.0)
    inv_h2 = DIFFUSION / (h * h)
    # interior node j (1..J-1) uses interfaces j-1/2 (index j-1) and j+1/2 (index j)
    lower = inv_h2 + p[:-1] / h
    diag = -2.0 * inv_h2 - p[1:] / h + m[:-1] / h
    upper = inv_h2 - m[1:] / h
    return lower, diag, upper


def _step(u, B, h, k, theta):
    """One theta-scheme step for the interior values; ``theta = 1`` is backward Euler."""
    lower, diag, upper = _operator(B, h)
    ui = u[1:-1]
    rhs = ui.copy()
    if theta < 1:
        e = 1.0 - theta
        rhs += e * k * diag * ui
        rhs[1:] += e * k * lower[1:] * ui[:-1]
        rhs[:-1] += e * k * upper[:-1] * ui[1:]
    ab = np.empty((3, ui.size))
    ab[0, 1:] = -theta * k * upper[:-1]
    ab[0, 0] = 0.0
    ab[1] = 1.0 - theta * k * diag
    ab[2, :-1] = -theta * k * lower[1:]
    ab[2, -1] = 0.0
    out = np.zeros_like(u)
    out[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
    return out


def _march(cfg: FpeConfig, drift_row, sup_bound, nonlinear=False):
    x, times = cfg.x, cfg.times
    h, k = cfg.h, cfg.k
    if cfg.scheme == "crank-nicolson-upwind" and sup_bound * k / h > 1:
        raise FpeError(f"CFL guard violated: sup|B| k / h = {sup_bound * k / h:.3g} > 1")
    w = trapezoid_weights(x)
    U = np.empty((times.size, x.size))
    beta = np.empty(times.size)
    table = np.empty((times.size, x.size))
    U[0] = cfg.initial_density()
    beta[0] = float(w @ U[0])
    for n in range(times.size - 1):
        B = drift_row(n, times[n], U[n], beta[n])
        table[n] = B
        theta = 1.0 if (cfg.scheme == "implicit-upwind" or n < 2) else 0.5
        u = _step(U[n], B, h, k, theta)
        low = float(u.min())
        if low < -NEG_TOL:
            raise FpeError(f"negative density {low:.3g} at step {n + 1}: scheme failure")
        neg = u < 0
        if np.any(neg):
            clipped = -float(w[neg] @ u[neg])
            if clipped > CLIP_TOL:
                raise FpeError(f"clipped mass {clipped:.3g} at step {n + 1}")
            u[neg] = 0.0
        U[n + 1] = u
        beta[n + 1] = float(w @ u)
        if nonlinear and beta[n + 1] > beta[n] + 1e-8:
            raise FpeError(f"survival mass increased at step {n + 1}: nonlinearity diverges")
    table[-1] = drift_row(times.size - 1, times[-1], U[-1], beta[-1])
    return DensityFlow(times, x, U, beta), table


def _check_grids(cfg: FpeConfig, drift: FrozenDrift):
    x, t = cfg.x, cfg.times
    if drift.space_grid.shape != x.shape or not np.allclose(drift.space_grid, x, rtol=0, atol=1e-12 * cfg.x_max):
        raise ConfigError("drift space grid does not match the solver grid")
    if drift.time_grid.shape != t.shape or not np.allclose(drift.time_grid, t, rtol=0, atol=1e-12 * cfg.horizon):
        raise ConfigError("drift time grid does not match the solver grid")


def solve_linear_fpe(cfg: FpeConfig, drift: FrozenDrift) -> DensityFlow:
    """Solve the killed linear equation with a frozen drift table.

    Parameters
    ----------
    cfg : FpeConfig
    drift : FrozenDrift
        Must live on ``cfg.times`` x ``cfg.x``.

    Returns
    -------
    DensityFlow
        ``u`` on the grid with ``u(., 0) = u(., x_max) = 0`` and
        ``beta = trapezoid(u)``.
    """
    _check_grids(cfg, drift)
    flow, _ = _march(cfg, lambda n, t, u, b: drift.table[n], drift.sup_bound)
    return flow


def solve_nonlinear_fpe(cfg: FpeConfig, kernel: KernelSpec, return_drift: bool = False):
    """Solve the nonlinear equation whose drift is the mean-field drift of the current density.

    The drift on each step is assembled from the density at the start of the
    step (explicit in the nonlinearity, implicit in diffusion and transport).
    With ``return_drift`` the assembled drift table is returned as well.
    """
    x = cfg.x

    def row(n, t, u, beta):
        B = density_drift(kernel, t, x, x, u)
        if np.max(np.abs(B)) > kernel.sup_bound * (1 + 1e-9) + 1e-12:
            raise FpeError("assembled drift exceeds the kernel bound")
        return B

    flow, table = _march(cfg, row, kernel.sup_bound, nonlinear=True)
    if return_drift:
        return flow, FrozenDrift(flow.time_grid, x, table, kernel.sup_bound * (1 + 1e-9) + 1e-12)
    return flow


# ---------------------------------------------------------------------------
# boundary flux


def boundary_flux(flow: DensityFlow, k: int) -> float:
    """``-du/dx(t_k, 0+)`` by the one-sided second-order difference.

    This is the instantaneous rate of change of the survival probability and
    is never positive for a nonnegative density vanishing at 0.
    """
    if flow.space_grid.size < 3:
        raise FpeError("need at least three spatial nodes")
    if not 1 <= k < flow.time_grid.size:
        raise FpeError(f"time index {k} outside 1..{flow.time_grid.size - 1}")
    u = flow.u[k]
    val = -(-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * flow.h)
    if val > 1e-12 * max(1.0, float(np.max(u))) / flow.h:
        raise FpeError(f"positive boundary flux {val:.3g}: density is not vanishing properly at 0")
    return float(val)


def flux_table(flow: DensityFlow):
    """Rows ``(t_k, -du/dx(t_k, 0+))`` for ``k >= 1``."""
    ks = range(1, flow.time_grid.size)
    return np.array([[flow.time_grid[k], boundary_flux(flow, k)] for k in ks])


def write_flux_csv(flow: DensityFlow, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "minus_dx_p_at_0"])
        for t, f in flux_table(flow):
            w.writerow([repr(float(t)), repr(float(f))])
