"""Residual of the survival representation

    alpha(s)/2 = int rho(x) G(0, x) dx - G(0, 0) - int_0^s alpha(t) d/dt G(t, 0) dt,
    G(t, x)    = int_0^inf g(t, x, s, y) dy,

where ``g`` is the whole-line (unkilled) transition density of
``dY = B dt + sqrt(2) dW``.  ``G`` is the probability that the unkilled
process started at ``(t, x)`` is positive at time ``s``.

Two ways to get ``G``:

* ``method="pde"`` solves the backward equation
  ``G_t + G_xx + B G_x = 0``, ``G(s, x) = 1{x > 0}`` on a widened grid;
* ``method="parametrix"`` integrates the parametrix density in ``y``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from ..errors import ConfigError, QuadratureError
from ..kernels import trapezoid_weights
from ..measures import DensityFlow
from .parametrix import _as_drift, parametrix_density

__all__ = ["survival_probability_table", "alpha_representation_terms", "alpha_representation_residual"]


def _backward_table(drift, times, x_pos, h, s_index, pad):
    """``G(t_k, x)`` for ``k <= s_index`` on ``x_pos`` by backward Euler on ``[-pad, x_max]``."""
    n_left = int(np.ceil(pad / h))
    x = np.concatenate([-h * np.arange(n_left, 0, -1), x_pos])
    B_of = _as_drift(drift)
    G = np.where(x > 0, 1.0, np.where(x == 0, 0.5, 0.0))
    out = np.empty((s_index + 1, x_pos.size))
    out[s_index] = G[n_left:]
    inv_h2 = 1.0 / (h * h)
    for k in range(s_index - 1, -1, -1):
        k_dt = times[k + 1] - times[k]
        B = np.zeros(x.size) if B_of is None else B_of(np.full(x.size, times[k]), x)
        Bi = B[1:-1]
        p, m = np.maximum(Bi, 0.0), np.minimum(Bi, 0.0)
        # G_t = -(G_xx + B G_x); step backward: (I - dt A) G^k = G^{k+1}
        lower = inv_h2 - m / h
        diag = -2.0 * inv_h2 - p / h + m / h
        upper = inv_h2 + p / h
        rhs = G[1:-1].copy()
        rhs[0] += k_dt * lower[0] * G[0]
        rhs[-1] += k_dt * upper[-1] * G[-1]
        ab = np.zeros((3, rhs.size))
        ab[0, 1:] = -k_dt * upper[:-1]
        ab[1] = 1.0 - k_dt * diag
        ab[2, :-1] = -k_dt * lower[1:]
        G = np.concatenate([[G[0]], solve_banded((1, 1), ab, rhs, check_finite=False), [G[-1]]])
        out[k] = G[n_left:]
    return out


def _parametrix_mass(drift, t, x, s, y, K, tol):
    """``int_0^inf g(t, x, s, y) dy`` by the trapezoid rule on ``y``."""
    return float(trapezoid_weights(y) @ parametrix_density(drift, t, x, s, y, K, tol=tol))


def survival_probability_table(flow: DensityFlow, drift, s: float, method: str = "pde", K: int = 3,
                               rho_cut: float = 1e-14, tol: float | None = 1e-7):
    """``G`` where the representation needs it.

    Returns ``(G(0, x_j) for j in nodes, G(t_k, 0) for t_k <= s, nodes)``,
    where ``nodes`` are the space nodes carrying initial density above
    ``rho_cut`` times its maximum.  ``G(s, 0)`` is the limit value 1/2.
    """
    t, x = flow.time_grid, flow.space_grid
    ks = flow.time_index(s)
    if ks < 1:
        raise ConfigError("s must be a positive grid time")
    rho = flow.u[0]
    nodes = np.flatnonzero(rho > rho_cut * rho.max())
    if method == "pde":
        pad = 8.0 * np.sqrt(2.0 * s) + getattr(drift, "sup_bound", 0.0) * s
        G = _backward_table(drift, t, x, flow.h, ks, pad)
        G0 = G[:, 0].copy()
        G0[ks] = 0.5
        return G[0, nodes], G0, nodes
    if method == "parametrix":
        Gr = np.array([_parametrix_mass(drift, 0.0, float(xv), s, x, K, tol) for xv in x[nodes]])
        G0 = np.array([_parametrix_mass(drift, float(tk), 0.0, s, x, K, tol) for tk in t[:ks]] + [0.5])
        return Gr, G0, nodes
    raise ConfigError(f"unknown method {method!r}")


def _time_derivative(f, t):
    """Central differences inside, one-sided at both ends."""
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (t[2:] - t[:-2])
    d[0] = (f[1] - f[0]) / (t[1] - t[0])
    d[-1] = (f[-1] - f[-2]) / (t[-1] - t[-2])
    return d


def alpha_representation_terms(flow: DensityFlow, drift, s: float, K: int = 3, method: str = "pde",
                               tol: float | None = 1e-7):
    """The four pieces ``(lhs, initial, start_at_0, memory)`` of the representation."""
    t, x = flow.time_grid, flow.space_grid
    ks = flow.time_index(s)
    Gr, G0, nodes = survival_probability_table(flow, drift, s, method, K, tol=tol)
    rho = flow.u[0]
    wx = trapezoid_weights(x)
    initial = float(np.sum(wx[nodes] * rho[nodes] * Gr))
    tt = t[: ks + 1]
    dG = _time_derivative(G0, tt)
    memory = float(trapezoid_weights(tt) @ (flow.beta[: ks + 1] * dG)) if ks >= 1 else 0.0
    lhs = 0.5 * float(flow.beta[ks])
    if not np.all(np.isfinite([initial, memory, G0[0]])):
        raise QuadratureError("non-finite term in the survival representation")
    return lhs, initial, float(G0[0]), memory


def alpha_representation_residual(flow: DensityFlow, drift, s: float, K: int = 3, method: str = "pde",
                                  tol: float | None = 1e-7) -> float:
    """``|alpha(s)/2 - (initial - start_at_0 - memory)|`` on the flow's grids.

    Parameters
    ----------
    flow : DensityFlow
        Solution whose survival curve is ``alpha`` and whose ``u(0, .)`` is ``rho``.
    drift : FrozenDrift, callable, float or None
        Drift of the unkilled process defining ``g``.
    s : float
        Evaluation time on the flow's time grid.
    K : int
        Parametrix order (``method="parametrix"`` only).
    """
    lhs, initial, g0, memory = alpha_representation_terms(flow, drift, s, K, method, tol)
    return abs(lhs - (initial - g0 - memory))
