"""Absorbed interacting particle system and its partially decoupled reference.

Each active particle moves by

    X_{k+1} = X_k + D_k(X_k) dt + sqrt(2 dt) xi_k,

where ``D_k`` is the empirical drift of the step-``k`` snapshot and ``xi_k`` is
drawn from the particle's own counter-based stream.  A particle is absorbed at
the first step whose endpoint is ``<= 0`` or, with the bridge correction, with
probability ``exp(-a b / dt)`` when both endpoints ``a, b`` are positive (exit
law of a Brownian bridge with variance ``2 dt``).  Absorbed particles are
pinned at exactly 0 and stop contributing to drift sums.

The reference system for ``r`` leaves particles ``0..r-1`` as pure stopped
Brownian motions and lets the others interact only among themselves (the
divisor stays ``N``).  Its change-of-measure weight back to the full system is
accumulated along the same increments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import kernels as K
from .errors import ConfigError, SimulationError
from .kernels import KernelSpec
from .rng import CounterStreams

__all__ = [
    "InitialLaw",
    "SimConfig",
    "ParticlePaths",
    "GirsanovWeight",
    "simulate",
    "simulate_reference",
    "simulate_batch",
    "girsanov_weight",
    "girsanov_weights",
]

_LAW_PARAMS = {"point": 1, "gaussian": 2, "lognormal": 2, "uniform": 2, "tabulated-quantile": None}


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Law of the initial positions, sampled by inverse CDF.

    ``point(z)``; ``gaussian(m, s)`` truncated to (0, inf); ``lognormal(m, s)``
    of ``exp(m + s N(0,1))``; ``uniform(a, b)`` with ``0 <= a < b``;
    ``tabulated-quantile`` with ``params`` the quantiles at equally spaced
    probability levels ``0, 1/(n-1), ..., 1``.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _LAW_PARAMS:
            raise ConfigError(f"unknown initial law {self.kind!r}")
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        n = _LAW_PARAMS[self.kind]
        if n is not None and len(p) != n:
            raise ConfigError(f"{self.kind} law takes {n} parameters, got {len(p)}")
        if self.kind == "point" and not p[0] > 0:
            raise ConfigError("point mass must sit in (0, inf)")
        if self.kind in ("gaussian", "lognormal") and not p[1] > 0:
            raise ConfigError("scale parameter must be positive")
        if self.kind == "uniform" and not 0 <= p[0] < p[1]:
            raise ConfigError("uniform law needs 0 <= a < b")
        if self.kind == "tabulated-quantile":
            q = np.asarray(p)
            if q.size < 2 or q[0] < 0 or np.any(np.diff(q) < 0):
                raise ConfigError("quantile table must be non-decreasing, start >= 0, length >= 2")

    @classmethod
    def point(cls, z: float):
        return cls("point", (z,))

    @property
    def z_max(self) -> float:
        """A point beyond which the law has negligible mass."""
        k, p = self.kind, self.params
        if k == "point":
            return p[0]
        if k == "gaussian":
            return p[0] + 8 * p[1]
        if k == "lognormal":
            return math.exp(p[0] + 8 * p[1])
        if k == "uniform":
            return p[1]
        return p[-1]

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        k, p = self.kind, self.params
        if k == "point":
            return np.full(u.shape, p[0])
        if k == "gaussian":
            lo = ndtr(-p[0] / p[1])
            return np.maximum(p[0] + p[1] * ndtri(lo + u * (1 - lo)), 0.0)
        if k == "lognormal":
            return np.exp(p[0] + p[1] * ndtri(u))
        if k == "uniform":
            return p[0] + (p[1] - p[0]) * u
        q = np.asarray(p)
        return np.interp(u, np.linspace(0, 1, q.size), q)

    def density(self, x, point_width: float | None = None):
        """Density on ``x``; a point mass is smeared into a truncated Gaussian of sd ``point_width``."""
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "point":
            if point_width is None:
                raise ConfigError("a point initial law needs point_width to define a density")
            return InitialLaw("gaussian", (p[0], point_width)).density(x)
        pos = x > 0
        if k == "gaussian":
            g = np.exp(-0.5 * ((x - p[0]) / p[1]) ** 2) / (p[1] * math.sqrt(2 * math.pi))
            return np.where(pos, g / ndtr(p[0] / p[1]), 0.0)
        if k == "lognormal":
            xs = np.where(pos, x, 1.0)
            g = np.exp(-0.5 * ((np.log(xs) - p[0]) / p[1]) ** 2) / (xs * p[1] * math.sqrt(2 * math.pi))
            return np.where(pos, g, 0.0)
        if k == "uniform":
            return np.where((x >= p[0]) & (x <= p[1]) & pos, 1.0 / (p[1] - p[0]), 0.0)
        q = np.asarray(p)
        dq = np.diff(q)
        if np.any(dq <= 0):
            raise ConfigError("quantile table with ties has no density")
        dens = (1.0 / (q.size - 1)) / dq
        idx = np.searchsorted(q, x, side="right") - 1
        inside = (idx >= 0) & (idx < dq.size) & pos
        return np.where(inside, dens[np.clip(idx, 0, dq.size - 1)], 0.0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialLaw":
        return cls(d["kind"], tuple(d.get("params", ())))


@dataclass(frozen=True, eq=False)
class SimConfig:
    n_particles: int
    horizon: float
    n_steps: int
    kernel: KernelSpec = field(default_factory=KernelSpec.zero)
    initial_law: InitialLaw = field(default_factory=lambda: InitialLaw.point(1.0))
    seed: int = 0
    bridge_correction: bool = True
    threads: int = 1

    def __post_init__(self):
        if int(self.n_particles) < 1:
            raise ConfigError("n_particles must be >= 1")
        if not self.horizon > 0 or int(self.n_steps) < 1:
            raise ConfigError("horizon and n_steps must be positive")
        if self.dt * self.kernel.sup_bound >= 0.1:
            raise ConfigError(
                f"stability guard violated: dt * sup|b| = {self.dt * self.kernel.sup_bound:.3g} >= 0.1"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if int(self.threads) < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def replace(self, **kw) -> "SimConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        return {
            "n_particles": int(self.n_particles),
            "horizon": self.horizon,
            "n_steps": int(self.n_steps),
            "kernel": self.kernel.to_dict(),
            "initial_law": self.initial_law.to_dict(),
            "seed": int(self.seed),
            "bridge_correction": bool(self.bridge_correction),
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "SimConfig":
        try:
            return cls(
                n_particles=int(d["n_particles"]),
                horizon=float(d["horizon"]),
                n_steps=int(d["n_steps"]),
                kernel=KernelSpec.from_dict(d.get("kernel", {"family": "zero", "sup_bound": 0}), base_dir),
                initial_law=InitialLaw.from_dict(d.get("initial_law", {"kind": "point", "params": [1.0]})),
                seed=int(d.get("seed", 0)),
                bridge_correction=bool(d.get("bridge_correction", True)),
                threads=int(d.get("threads", 1)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid simulation config: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True, eq=False)
class ParticlePaths:
    """Trajectories of one run.

    ``positions[k, i]`` is particle ``i`` at ``t_k``; ``absorption_step[i]`` is
    the first grid index at which it sits at 0 (``n_steps + 1`` if never).
    ``stream_ids[i]`` names the random stream that drove particle ``i``.
    """

    config: SimConfig
    positions: np.ndarray
    absorption_step: np.ndarray
    stream_ids: np.ndarray
    reference_r: int | None = None

    def __post_init__(self):
        for a in (self.positions, self.absorption_step, self.stream_ids):
            a.setflags(write=False)

    @property
    def times(self):
        return self.config.times

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def survival(self):
        """Fraction of particles still active at each grid time."""
        return np.count_nonzero(self.positions > 0, axis=1) / self.n


@dataclass(frozen=True)
class GirsanovWeight:
    r: int
    log_weight: float
    quadratic_variation: float

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


# ---------------------------------------------------------------------------
# engine


def _source_sums(spec, t, X, targets, sources, threads):
    """Rows ``m``: ``sum_{j in sources[m]} b(t, X[m, i], X[m, j])`` for ``i`` in ``targets[m]``.

    Sources are summed in ascending order of position so the result does
    not depend on particle labels.
    """
    M, N = X.shape
    out = np.zeros((M, N))
    fam, p = spec.family, spec.params
    if fam == "zero":
        return out
    if fam == "constant":
        cnt = np.count_nonzero(sources, axis=1).astype(float)
        return np.where(targets, p[0] * cnt[:, None], 0.0)
    if fam == "separable-product":
        xs = np.sort(np.where(sources, X, np.inf), axis=1)
        g = np.where(np.isfinite(xs), np.exp(-p[2] * np.where(np.isfinite(xs), xs, 0.0) ** 2), 0.0)
        tot = np.add.reduce(g.T, axis=0)  # sequential over the sorted sources
        return np.where(targets, p[0] * np.exp(-p[1] * X * X) * tot[:, None], 0.0)
    for m in range(M):
        ti = np.flatnonzero(targets[m])
        if ti.size == 0:
            continue
        xs = np.sort(X[m, sources[m]])
        out[m, ti] = K._pair_sums(spec, t, X[m, ti], xs, threads=threads)
    return out


def _weight_increment(spec, t, X, active, decoupled, xi, dt, threads):
    """One step of ``log Z`` and of ``int |beta|^2`` for every replica.

    ``beta`` is the drift the reference system removes: the full drift for
    decoupled particles and the pull of decoupled particles on the others.
    With diffusion ``sqrt 2`` the Girsanov kernel is ``beta / sqrt 2``.
    """
    N = X.shape[1]
    full_dec = _source_sums(spec, t, X, active & decoupled, active, threads)
    from_dec = _source_sums(spec, t, X, active & ~decoupled, active & decoupled, threads)
    beta = (full_dec + from_dec) / N
    q = np.add.reduce((beta * beta).T, axis=0)
    dlog = np.add.reduce((beta * xi).T, axis=0) * math.sqrt(dt / 2.0) - 0.25 * q * dt
    return dlog, q * dt


def _run(config: SimConfig, n_rep: int = 1, stream_ids=None, r: int | None = None,
         record="all", weights: bool = False):
    """Core Euler-Maruyama loop over a batch of ``n_rep`` independent replicas.

    Returns a dict with ``positions`` (recorded steps x n_rep x N),
    ``absorption_step`` (n_rep x N), ``stream_ids`` and, if ``weights``,
    ``log_weight`` / ``quadratic_variation`` (n_rep,).
    """
    N, n, dt = int(config.n_particles), int(config.n_steps), config.dt
    spec = config.kernel
    if stream_ids is None:
        stream_ids = np.arange(n_rep * N, dtype=np.int64).reshape(n_rep, N)
    stream_ids = np.asarray(stream_ids, dtype=np.int64).reshape(n_rep, N)
    if r is not None and not 1 <= r <= N:
        raise ConfigError(f"reference size r = {r} outside [1, N]")
    rng = CounterStreams(config.seed)

    X = config.initial_law.quantile(rng.initial_uniforms(stream_ids))
    if not np.all(X > 0):
        raise SimulationError("initial sample has a non-positive position")
    absorbed_at = np.full((n_rep, N), n + 1, dtype=np.int64)

    if record == "all":
        rec_steps = np.arange(n + 1)
    elif record == "terminal":
        rec_steps = np.array([n])
    else:
        rec_steps = np.unique(np.asarray(record, dtype=np.int64))
        if rec_steps.size and (rec_steps[0] < 0 or rec_steps[-1] > n):
            raise ConfigError("recorded steps outside the grid")
    slot = {int(s): i for i, s in enumerate(rec_steps)}
    out = np.empty((rec_steps.size, n_rep, N))
    if 0 in slot:
        out[slot[0]] = X

    decoupled = np.zeros(N, dtype=bool)
    if r is not None:
        decoupled[:r] = True
    log_w = np.zeros(n_rep)
    qv = np.zeros(n_rep)
    sq2dt = math.sqrt(2.0 * dt)

    for k in range(n):
        t = k * dt
        active = X > 0
        if r is None:
            drift = _source_sums(spec, t, X, active, active, config.threads) / N
        else:
            coupled = active & ~decoupled
            drift = _source_sums(spec, t, X, coupled, coupled, config.threads) / N
        xi, u = rng.step_draws(k, stream_ids)
        if weights:
            dl, dq = _weight_increment(spec, t, X, active, decoupled, xi, dt, config.threads)
            log_w += dl
            qv += dq
        Xn = X + drift * dt + sq2dt * xi
        hit = active & (Xn <= 0)
        if config.bridge_correction:
            with np.errstate(over="ignore"):
                p_exit = np.exp(-np.maximum(X * Xn, 0.0) / dt)
            hit |= active & (Xn > 0) & (u < p_exit)
        Xn = np.where(active & ~hit, Xn, 0.0)
        absorbed_at[hit] = k + 1
        X = Xn
        if k + 1 in slot:
            out[slot[k + 1]] = X

    res = {"positions": out, "absorption_step": absorbed_at, "stream_ids": stream_ids,
           "recorded_steps": rec_steps}
    if weights:
        res["log_weight"] = log_w
        res["quadratic_variation"] = qv
    return res


def _paths(config, res, r=None):
    return ParticlePaths(
        config=config,
        positions=np.ascontiguousarray(res["positions"][:, 0, :]),
        absorption_step=res["absorption_step"][0].copy(),
        stream_ids=res["stream_ids"][0].copy(),
        reference_r=r,
    )


def simulate(config: SimConfig, stream_ids=None) -> ParticlePaths:
    """Simulate the absorbed N-particle system on the uniform grid.

    Parameters
    ----------
    stream_ids : int array (N,), optional
        Random stream of each particle; defaults to ``0..N-1``.  Permuting
        it together with nothing else permutes the output paths.
    """
    return _paths(config, _run(config, 1, stream_ids))


def simulate_reference(config: SimConfig, r: int, stream_ids=None) -> ParticlePaths:
    """Reference system: particles ``0..r-1`` decoupled, the rest interacting among themselves."""
    N = int(config.n_particles)
    if not 1 <= r < N:
        raise ConfigError(f"r = {r} must satisfy 1 <= r < N = {N}")
    return _paths(config, _run(config, 1, stream_ids, r=r), r=r)


def simulate_batch(config: SimConfig, n_rep: int, first_stream: int = 0, record="terminal"):
    """Run ``n_rep`` independent replicas in one vectorized sweep.

    Replica ``m`` uses streams ``first_stream + m N + (0..N-1)``; returns the
    recorded positions with shape (steps, n_rep, N) and the absorption steps.
    """
    N = int(config.n_particles)
    ids = first_stream + np.arange(n_rep * N, dtype=np.int64).reshape(n_rep, N)
    res = _run(config, n_rep, ids, record=record)
    return res["positions"], res["absorption_step"]


def girsanov_weights(config: SimConfig, r: int, n_rep: int, first_stream: int = 0):
    """Weights ``Z_T^(r)`` of ``n_rep`` independent reference runs (vectorized).

    Returns ``(log_weight, quadratic_variation)`` arrays.
    """
    N = int(config.n_particles)
    if not 1 <= r < N:
        raise ConfigError(f"r = {r} must satisfy 1 <= r < N = {N}")
    ids = first_stream + np.arange(n_rep * N, dtype=np.int64).reshape(n_rep, N)
    res = _run(config, n_rep, ids, r=r, record="terminal", weights=True)
    return res["log_weight"], res["quadratic_variation"]


def girsanov_weight(ref_paths: ParticlePaths, r: int, kernel: KernelSpec | None = None) -> GirsanovWeight:
    """Change-of-measure weight of a stored reference run.

    The Brownian increments are replayed from the stored stream ids, so the
    weight is exactly the one that drove ``ref_paths``.

    ``log_weight = sum_k sum_i (beta_i / sqrt 2) dW_i - 1/4 sum_k |beta|^2 dt``
    where ``beta`` is the drift removed by the reference system; the
    ``sqrt 2`` comes from the diffusion coefficient.  ``quadratic_variation``
    is ``sum_k |beta|^2 dt``.
    """
    if ref_paths.reference_r is None:
        raise ConfigError("paths were not produced by simulate_reference")
    if ref_paths.reference_r != r:
        raise ConfigError(f"r mismatch: paths built with r = {ref_paths.reference_r}, asked for {r}")
    if ref_paths.stream_ids is None or ref_paths.stream_ids.size != ref_paths.n:
        raise ConfigError("paths carry no stream manifest")
    cfg = ref_paths.config
    spec = cfg.kernel if kernel is None else kernel
    N, dt = ref_paths.n, cfg.dt
    rng = CounterStreams(cfg.seed)
    ids = ref_paths.stream_ids[None, :]
    decoupled = np.zeros(N, dtype=bool)
    decoupled[:r] = True
    log_w = np.zeros(1)
    qv = np.zeros(1)
    for k in range(cfg.n_steps):
        X = ref_paths.positions[k][None, :]
        active = X > 0
        xi, _ = rng.step_draws(k, ids)
        dl, dq = _weight_increment(spec, k * dt, X, active, decoupled, xi, dt, cfg.threads)
        log_w += dl
        qv += dq
    return GirsanovWeight(r=r, log_weight=float(log_w[0]), quadratic_variation=float(qv[0]))


def realized_drifts(paths: ParticlePaths):
    """Per-step drifts actually applied, shape (n_steps, N); 0 for absorbed particles."""
    cfg = paths.config
    N = paths.n
    decoupled = np.zeros(N, dtype=bool)
    if paths.reference_r is not None:
        decoupled[: paths.reference_r] = True
    out = np.empty((cfg.n_steps, N))
    for k in range(cfg.n_steps):
        X = paths.positions[k][None, :]
        src = (X > 0) & ~decoupled
        out[k] = _source_sums(cfg.kernel, k * cfg.dt, X, src, src, cfg.threads)[0] / N
    return out
