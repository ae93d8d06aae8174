"""Compactly supported C^2 test functions and bounded path functionals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

__all__ = ["TestFunctionSpec"]


def _bump(r):
    """``exp(1 - 1/(1 - r^2))`` on ``|r| < 1`` and its first two r-derivatives."""
    inside = np.abs(r) < 1
    ri = np.where(inside, r, 0.0)
    s = 1.0 - ri * ri
    g = 1.0 - 1.0 / s
    e = np.where(inside, np.exp(g), 0.0)
    g1 = -2.0 * ri / (s * s)
    g2 = -2.0 / (s * s) - 8.0 * ri * ri / (s * s * s)
    return e, np.where(inside, g1 * e, 0.0), np.where(inside, (g2 + g1 * g1) * e, 0.0)


def _poly(r, n):
    """``(1 - r^2)^n`` on ``|r| < 1`` and its first two r-derivatives."""
    inside = np.abs(r) < 1
    ri = np.where(inside, r, 0.0)
    s = 1.0 - ri * ri
    f = s**n
    f1 = -2.0 * n * ri * s ** (n - 1)
    f2 = 4.0 * n * (n - 1) * ri * ri * s ** (n - 2) - 2.0 * n * s ** (n - 1)
    return tuple(np.where(inside, v, 0.0) for v in (f, f1, f2))


@dataclass(frozen=True, eq=False)
class TestFunctionSpec:
    """Test function ``phi`` with analytic derivatives, and a bounded path weight ``Phi``.

    Parameters
    ----------
    phi : {"bump", "poly-cutoff"}
        ``bump``: ``exp(1 - 1/(1 - r^2))``, ``r = (x - center)/width``.
        ``poly-cutoff``: ``(1 - (x/support)^2)^degree`` (``degree >= 3``).
    phi_params : tuple
        ``(center, width)`` or ``(degree, support)``.
    Phi : {"constant", "bounded-eval"}
        ``constant``: ``Phi = 1``.  ``bounded-eval``: ``Phi = min(x_r, cap)``
        for a path time ``r``.
    Phi_params : tuple
        ``()`` or ``(r, cap)``.
    """

    __test__ = False  # not a pytest class

    phi: str = "bump"
    phi_params: tuple = (1.0, 0.5)
    Phi: str = "constant"
    Phi_params: tuple = ()
    norms: dict = field(init=False, repr=False)

    def __post_init__(self):
        p = tuple(float(v) for v in self.phi_params)
        object.__setattr__(self, "phi_params", p)
        object.__setattr__(self, "Phi_params", tuple(float(v) for v in self.Phi_params))
        if self.phi == "bump":
            if len(p) != 2 or not p[1] > 0:
                raise ConfigError("bump needs (center, width > 0)")
        elif self.phi == "poly-cutoff":
            if len(p) != 2 or p[0] < 3 or p[0] != int(p[0]) or not p[1] > 0:
                raise ConfigError("poly-cutoff needs (integer degree >= 3, support > 0)")
        else:
            raise ConfigError(f"unknown test function {self.phi!r}")
        if self.Phi == "constant":
            if self.Phi_params:
                raise ConfigError("constant Phi takes no parameters")
        elif self.Phi == "bounded-eval":
            if len(self.Phi_params) != 2 or self.Phi_params[0] < 0 or not self.Phi_params[1] > 0:
                raise ConfigError("bounded-eval Phi needs (time >= 0, cap > 0)")
        else:
            raise ConfigError(f"unknown path functional {self.Phi!r}")
        object.__setattr__(self, "norms", self._norms())

    def _scaled(self, x):
        a, b = self.phi_params
        if self.phi == "bump":
            f, f1, f2 = _bump((np.asarray(x, dtype=float) - a) / b)
            return f, f1 / b, f2 / (b * b)
        f, f1, f2 = _poly(np.asarray(x, dtype=float) / b, int(a))
        return f, f1 / b, f2 / (b * b)

    def phi_derivs(self, x):
        """``(phi, phi', phi'')`` at ``x``."""
        return self._scaled(x)

    def support(self):
        a, b = self.phi_params
        return (a - b, a + b) if self.phi == "bump" else (-b, b)

    def _norms(self):
        lo, hi = self.support()
        x = np.linspace(lo, hi, 200_001)
        f, f1, f2 = self._scaled(x)
        cap = 1.0 if self.Phi == "constant" else self.Phi_params[1]
        return {
            "phi": float(np.max(np.abs(f))),
            "dphi": float(np.max(np.abs(f1))),
            "d2phi": float(np.max(np.abs(f2))),
            "Phi": cap,
        }

    def Phi_values(self, times, positions, s):
        """``Phi`` of each path, using only the path up to time ``s``.

        ``positions`` has time along axis 0; returns the remaining shape.
        """
        if self.Phi == "constant":
            return np.ones(positions.shape[1:])
        r, cap = self.Phi_params
        if r > s + 1e-12:
            raise ConfigError("Phi may only look at the path up to time s")
        k = int(np.argmin(np.abs(np.asarray(times) - r)))
        if abs(times[k] - r) > 1e-9 * max(1.0, abs(r)):
            raise ConfigError(f"Phi time {r} is off the grid")
        return np.minimum(positions[k], cap)

    def to_dict(self) -> dict:
        return {"phi": self.phi, "phi_params": list(self.phi_params), "Phi": self.Phi,
                "Phi_params": list(self.Phi_params)}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunctionSpec":
        return cls(d.get("phi", "bump"), tuple(d.get("phi_params", (1.0, 0.5))), d.get("Phi", "constant"),
                   tuple(d.get("Phi_params", ())))
