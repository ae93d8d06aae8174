"""Experiment orchestration: martingale functionals, chaos sweeps, validation."""

from .report import ExperimentReport, config_hash
from .sweep import ChaosSweepConfig, limit_marginals, loglog_slope, run_chaos_sweep
from .testfunctions import TestFunctionSpec
from .theta import occupation_fraction, regularization_bound, theta_batch, theta_functional, theta_regularized
from .validation import CHECKS, LEVELS, validate_all

__all__ = [
    "ChaosSweepConfig",
    "CHECKS",
    "config_hash",
    "ExperimentReport",
    "LEVELS",
    "limit_marginals",
    "loglog_slope",
    "occupation_fraction",
    "regularization_bound",
    "run_chaos_sweep",
    "TestFunctionSpec",
    "theta_batch",
    "theta_functional",
    "theta_regularized",
    "validate_all",
]
