"""Parametrix series for the whole-line transition density of

    dY = B(t, Y) dt + sqrt(2) dW.

With the frozen Gaussian ``q(t,x,s,y) = phi(2(s-t), y-x)`` and the correction
kernel ``H(t,x,s,y) = B(t,x) d/dx q(t,x,s,y)``,

    p = q + sum_{k>=1} q (x) H^{(x)k},
    (f (x) g)(t,x,s,y) = int_t^s du int f(t,x,u,z) g(u,z,s,y) dz.

Each convolution is evaluated with the Brownian-bridge identity
``q(t,x,u,z) q(u,z,s,y) = q(t,x,s,y) N(z; m, v)``: the space integral becomes
a Gauss-Hermite sum around the bridge mean ``m`` with bridge variance ``v``,
and the time integral is Gauss-Legendre after ``u = s - (s-t) w^2``, which
removes the ``(s-u)^{-1/2}`` singularity of ``H`` at the right end.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..errors import ConfigError, QuadratureError

__all__ = ["gaussian_q", "parametrix_terms", "parametrix_density"]


def gaussian_q(t, x, s, y):
    """``phi(2(s-t), y-x)``, the transition density of ``sqrt(2) W``."""
    r = 2.0 * (np.asarray(s) - np.asarray(t))
    return np.exp(-((np.asarray(y) - np.asarray(x)) ** 2) / (2.0 * r)) / np.sqrt(2.0 * math.pi * r)


@lru_cache(maxsize=None)
def _rules(n_t, n_z):
    v, wv = np.polynomial.legendre.leggauss(n_t)
    v, wv = 0.5 * (v + 1.0), 0.5 * wv
    z, wz = np.polynomial.hermite_e.hermegauss(n_z)
    return v, wv, z, wz / math.sqrt(2.0 * math.pi)


def _ratio_terms(K, drift, t, x, s, y, n_t, n_z):
    """``T_k(t,x,s,y) / q(t,x,s,y)`` for ``k = 0..K`` at the points ``(s, y)`` (same shape)."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    out = [np.ones(s.shape)]
    if K == 0:
        return out
    v, wv, gz, wz = _rules(n_t, n_z)
    L = s - t
    # time nodes u = s - L v^2 with weights 2 L v wv
    u = s[..., None] - L[..., None] * v**2
    wu = 2.0 * L[..., None] * v * wv
    a = (u - t) / L[..., None]
    m = x + (y[..., None] - x) * a
    var = 2.0 * (u - t) * (s[..., None] - u) / L[..., None]
    z = m[..., None] + np.sqrt(var)[..., None] * gz  # (..., n_t, n_z)
    uu = np.broadcast_to(u[..., None], z.shape)
    # H / q(u,z,s,y) = B(u,z) (y - z) / (2 (s - u))
    h = drift(uu, z) * (y[..., None, None] - z) / (2.0 * (s[..., None, None] - uu))
    inner = _ratio_terms(K - 1, drift, t, x, uu, z, n_t, n_z)
    w = wu[..., None] * wz
    for k in range(1, K + 1):
        out.append(np.sum(inner[k - 1] * h * w, axis=(-2, -1)))
    return out


def _as_drift(drift):
    if drift is None:
        return None
    c = getattr(drift, "constant_value", None)
    if c is not None:
        if c == 0:
            return None
        return lambda u, z: np.full(np.broadcast(u, z).shape, c)
    if callable(drift):
        return drift
    c = float(drift)
    return None if c == 0 else (lambda u, z: np.full(np.broadcast(u, z).shape, c))


def parametrix_terms(drift, t: float, x: float, s, y, K: int, n_t: int = 10, n_z: int = 10,
                     chunk: int | None = None):
    """Series terms ``T_0 .. T_K`` at the points ``(s, y)``.

    Parameters
    ----------
    drift : FrozenDrift, callable ``B(u, z)`` or float
        The drift; ``None`` or 0 means no drift (all corrections vanish).
    t, x : float
        Start time and point.
    s, y : array_like
        End times (``> t``) and points, broadcast together.
    K : int
        Number of correction terms.

    Returns
    -------
    ndarray, shape (K + 1,) + broadcast shape
    """
    if K < 0:
        raise ConfigError("K must be non-negative")
    s, y = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(y, dtype=float))
    if np.any(s <= t):
        raise ConfigError("need s > t")
    q = gaussian_q(t, x, s, y)
    B = _as_drift(drift)
    res = np.zeros((K + 1,) + s.shape)
    res[0] = q
    if B is None or K == 0:
        return res
    if (n_t * n_z) ** K > 5e7:
        raise ConfigError(f"{(n_t * n_z) ** K:.2g} quadrature nodes per point; lower K or the node counts")
    sf, yf = s.ravel(), y.ravel()
    # the K-th level touches (n_t n_z)^K nodes per point
    if chunk is None:
        chunk = max(1, int(4e6 // (n_t * n_z) ** K))
    flat = np.empty((K + 1, sf.size))
    for lo in range(0, sf.size, chunk):
        sl = slice(lo, lo + chunk)
        r = _ratio_terms(K, B, t, x, sf[sl], yf[sl], n_t, n_z)
        flat[:, sl] = np.array(r)
    return flat.reshape((K + 1,) + s.shape) * q


def parametrix_density(drift, t: float, x: float, s, y, K: int, n_t: int = 10, n_z: int = 10,
                       tol: float | None = 1e-7):
    """Parametrix approximation with ``K`` correction terms.

    If ``tol`` is given, the series is recomputed with two more nodes per
    dimension and a ``QuadratureError`` is raised when the two differ by more
    than ``tol`` at any point.
    """
    val = parametrix_terms(drift, t, x, s, y, K, n_t, n_z).sum(axis=0)
    if tol is not None and K > 0 and _as_drift(drift) is not None:
        fine = parametrix_terms(drift, t, x, s, y, K, n_t + 2, n_z + 2).sum(axis=0)
        gap = float(np.max(np.abs(fine - val), initial=0.0))
        if gap > tol:
            raise QuadratureError(f"parametrix quadrature not converged: refinement changed value by {gap:.3g}")
        val = fine
    return val
