"""File outputs of a particle simulation."""

from __future__ import annotations

import os

from ..particle import ParticlePaths
from .report import ExperimentReport

__all__ = ["simulation_report", "write_simulation"]


def simulation_report(paths: ParticlePaths, with_paths: bool = False) -> ExperimentReport:
    cfg = paths.config
    rep = ExperimentReport.start("simulate", cfg.to_dict(), cfg.seed)
    n = cfg.n_steps
    rep.add_table(
        "terminal_samples",
        ["particle", "stream", "x", "absorption_step"],
        [[i, int(paths.stream_ids[i]), float(paths.positions[n, i]), int(paths.absorption_step[i])]
         for i in range(paths.n)],
    )
    rep.add_table("survival", ["t", "alpha"], [[float(t), float(a)] for t, a in zip(paths.times, paths.survival())])
    if with_paths:
        rep.add_table("paths", ["t"] + [f"x{i}" for i in range(paths.n)],
                      [[float(t)] + [float(v) for v in row] for t, row in zip(paths.times, paths.positions)])
    return rep


def write_simulation(paths: ParticlePaths, out_dir: str, with_paths: bool = False) -> ExperimentReport:
    """Write ``terminal_samples.csv``, ``survival.csv``, ``manifest.json`` and optionally ``paths.csv``."""
    rep = simulation_report(paths, with_paths)
    rep.write(os.path.abspath(out_dir))
    return rep
