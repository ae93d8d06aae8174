"""Propagation-of-chaos sweeps: W1 distance between the particle empirical
measure and the mean-field limit, as a function of the particle count."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..fpe.solver import FpeConfig, FrozenDrift, solve_linear_fpe
from ..kernels import KernelSpec, trapezoid_weights
from ..measures import EmpiricalMeasure, GridMeasure, w1_distance
from ..meanfield import picard_solve
from ..particle import SimConfig, simulate_batch
from ..fpe.images import images_density
from ..rng import derive_seed
from .report import ExperimentReport

__all__ = ["ChaosSweepConfig", "limit_marginals", "run_chaos_sweep", "loglog_slope"]


@dataclass(frozen=True, eq=False)
class ChaosSweepConfig:
    """Particle counts, replicas and evaluation times of a sweep.

    ``sim`` supplies horizon, steps, initial law, bridge flag and seed (its
    ``n_particles`` is ignored); ``fpe`` is the grid of the limit solve.
    ``step_budget`` caps ``max(n_list) * replicas * n_steps``.
    """

    n_list: tuple
    replicas: int
    times: tuple
    sim: SimConfig
    fpe: FpeConfig
    kernel: KernelSpec = field(default_factory=KernelSpec.zero)
    picard_tol: float = 1e-8
    step_budget: float = 1e9

    def __post_init__(self):
        n = tuple(int(v) for v in self.n_list)
        if not n or any(v < 1 for v in n) or any(b <= a for a, b in zip(n, n[1:])):
            raise ConfigError("n_list must be increasing positive integers")
        object.__setattr__(self, "n_list", n)
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if int(self.replicas) < 1:
            raise ConfigError("replicas must be >= 1")
        cost = max(n) * int(self.replicas) * self.sim.n_steps
        if cost > self.step_budget:
            raise ConfigError(f"sweep needs {cost:.3g} particle-steps, budget is {self.step_budget:.3g}")
        for t in self.times:
            if not 0 < t <= self.sim.horizon:
                raise ConfigError(f"evaluation time {t} outside (0, horizon]")

    def to_dict(self) -> dict:
        return {
            "n_list": list(self.n_list),
            "replicas": int(self.replicas),
            "times": list(self.times),
            "sim": self.sim.to_dict(),
            "fpe": self.fpe.to_dict(),
            "kernel": self.kernel.to_dict(),
            "picard_tol": self.picard_tol,
            "step_budget": self.step_budget,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "ChaosSweepConfig":
        try:
            kernel = KernelSpec.from_dict(d.get("kernel", {"family": "zero", "sup_bound": 0}), base_dir)
            sim_d = dict(d["sim"])
            sim_d.setdefault("n_particles", 1)
            sim_d["kernel"] = kernel.to_dict()
            sim = SimConfig.from_dict(sim_d, base_dir)
            fpe_d = dict(d.get("fpe", {"h": 5e-3, "k": 5e-3}))
            fpe_d.setdefault("horizon", sim.horizon)
            fpe_d.setdefault("initial_law", sim.initial_law.to_dict())
            return cls(
                n_list=tuple(d["n_list"]),
                replicas=int(d["replicas"]),
                times=tuple(d.get("times", [sim.horizon])),
                sim=sim,
                fpe=FpeConfig.from_dict(fpe_d),
                kernel=kernel,
                picard_tol=float(d.get("picard_tol", 1e-8)),
                step_budget=float(d.get("step_budget", 1e9)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid sweep config: {exc}") from None


def _grid_measure(x, u, beta=None):
    mass = float(trapezoid_weights(x) @ u)
    return GridMeasure(x, u, 1.0 - mass)


def limit_marginals(cfg: ChaosSweepConfig):
    """Limit law at each evaluation time, as grid measures.

    Zero kernel with a point initial law uses the closed-form killed density;
    other zero-kernel laws use the linear solver; otherwise the fixed point.
    """
    law = cfg.sim.initial_law
    if cfg.kernel.family == "zero" and law.kind == "point":
        z = law.params[0]
        x = np.linspace(0.0, z + 8 * np.sqrt(2 * max(cfg.times)), 20001)
        return {t: _grid_measure(x, images_density(z, t, x)) for t in cfg.times}, "closed-form"
    fcfg = cfg.fpe
    if cfg.kernel.family == "zero":
        flow = solve_linear_fpe(fcfg, FrozenDrift.constant(0.0, fcfg.times, fcfg.x))
        how = "linear-fpe"
    else:
        flow = picard_solve(cfg.kernel, fcfg, tol=cfg.picard_tol).pair.flow
        how = "fixed-point"
    return {t: flow.marginal(flow.time_index(t)) for t in cfg.times}, how


def loglog_slope(n_list, means) -> float:
    return float(np.polyfit(np.log(np.asarray(n_list, float)), np.log(np.asarray(means, float)), 1)[0])


def _steps_for(times, sim):
    return [int(round(t / sim.dt)) for t in times]


def run_chaos_sweep(cfg: ChaosSweepConfig, threads: int = 1, seed: int | None = None) -> ExperimentReport:
    """Simulate every ``(N, replica)`` and tabulate ``W1(mu^N_t, mu_t)``.

    Replica ``m`` at size ``N`` uses seed ``derive_seed(seed, N)`` and streams
    ``m N .. (m + 1) N - 1``, so results do not depend on ``threads``.
    Failed replicas are listed in the ``failures`` table and skipped.
    """
    seed = cfg.sim.seed if seed is None else int(seed)
    report = ExperimentReport.start("chaos-sweep", cfg.to_dict(), seed)
    limits, how = limit_marginals(cfg)
    report.manifest["limit"] = how
    steps = _steps_for(cfg.times, cfg.sim)
    for t, k in zip(cfg.times, steps):
        if abs(k * cfg.sim.dt - t) > 1e-9:
            raise ConfigError(f"evaluation time {t} is off the particle grid")

    jobs = [(N, m) for N in cfg.n_list for m in range(cfg.replicas)]

    def work(job):
        N, m = job
        s_N = derive_seed(seed, N)
        sim = cfg.sim.replace(n_particles=N, kernel=cfg.kernel, seed=s_N, threads=1)
        try:
            pos, _ = simulate_batch(sim, 1, first_stream=m * N, record=steps)
        except Exception as exc:  # recorded, not fatal
            return job, s_N, None, repr(exc)
        w = [w1_distance(EmpiricalMeasure(pos[i, 0]), limits[t]) for i, t in enumerate(cfg.times)]
        return job, s_N, w, None

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    rows, fails = [], []
    per = {}
    for (N, m), s_N, w, err in results:
        if err is not None:
            fails.append([N, m, s_N, err])
            continue
        for t, v in zip(cfg.times, w):
            rows.append([N, m, s_N, t, v])
            per.setdefault((N, t), []).append(v)
    report.add_table("w1", ["N", "replica", "seed", "t", "w1"], rows)
    summ, slopes = [], []
    for t in cfg.times:
        means = []
        for N in cfg.n_list:
            v = np.array(per.get((N, t), []))
            mean = float(v.mean()) if v.size else float("nan")
            se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
            summ.append([N, t, v.size, mean, se])
            means.append(mean)
        slope = loglog_slope(cfg.n_list, means) if len(cfg.n_list) > 1 and np.all(np.isfinite(means)) else float("nan")
        slopes.append([t, slope])
    report.add_table("w1_summary", ["N", "t", "replicas", "mean_w1", "stderr"], summ)
    report.add_table("slope", ["t", "loglog_slope"], slopes)
    if fails:
        report.add_table("failures", ["N", "replica", "seed", "error"], fails)
    return report
