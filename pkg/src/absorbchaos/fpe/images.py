"""Closed-form killed densities from the method of images.

For ``du/dt = u_xx - c u_x`` on ``(0, inf)`` with ``u(t, 0) = 0`` and a unit
point mass at ``z > 0``:

    u(t, y) = G_t(y - z - c t) - exp(-c z) G_t(y + z - c t),
    G_t(w)  = exp(-w^2 / (4 t)) / sqrt(4 pi t).

The image weight is ``exp(-2 c z / sigma^2)`` with ``sigma^2 = 2``.  The
test-suite checks the formula symbolically against the PDE and the boundary
condition.  ``c = 0`` gives the stopped Brownian motion.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, ndtr

from ..errors import ConfigError

__all__ = [
    "heat_kernel",
    "images_density",
    "images_survival",
    "images_flux",
    "drifted_images_density",
    "drifted_images_survival",
    "drifted_images_flux",
]


def _check(z, t):
    if not (np.all(np.asarray(z) > 0) and np.all(np.asarray(t) > 0)):
        raise ConfigError("image formulas need z > 0 and t > 0")


def heat_kernel(t, w):
    """``G_t(w)``: density of ``sqrt(2) W_t``."""
    t = np.asarray(t, dtype=float)
    return np.exp(-np.asarray(w) ** 2 / (4.0 * t)) / np.sqrt(4.0 * math.pi * t)


def drifted_images_density(z, c, t, y):
    _check(z, t)
    y = np.asarray(y, dtype=float)
    return np.where(y >= 0, heat_kernel(t, y - z - c * t) - np.exp(-c * z) * heat_kernel(t, y + z - c * t), 0.0)


def drifted_images_survival(z, c, t):
    """Mass of ``drifted_images_density`` on ``(0, inf)``."""
    _check(z, t)
    s = np.sqrt(2.0 * np.asarray(t, dtype=float))
    return ndtr((z + c * t) / s) - np.exp(-c * z) * ndtr((c * t - z) / s)


def drifted_images_flux(z, c, t):
    """``-d/dy u(t, 0+)``, the rate of change of the survival probability."""
    _check(z, t)
    return -heat_kernel(t, z + c * np.asarray(t)) * z / np.asarray(t)


def images_density(z, t, y):
    return drifted_images_density(z, 0.0, t, y)


def images_survival(z, t):
    """``erf(z / (2 sqrt t))``: probability that ``z + sqrt(2) W`` has not hit 0 by ``t``."""
    _check(z, t)
    return erf(z / (2.0 * np.sqrt(t)))


def images_flux(z, t):
    return drifted_images_flux(z, 0.0, t)
