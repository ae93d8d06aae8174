"""Command line entry point.

    absorbchaos [--seed S] [--out DIR] [--threads T] [--level L] <command> ...

Commands: ``simulate``, ``solve-fpe``, ``fixed-point``, ``chaos-sweep``,
``validate``.  Configurations are JSON files; every table is written as CSV
with a header row next to a ``manifest.json``.  Exit status is 0 on success,
2 when a validation check fails, 3 on a configuration error and 1 on any
other failure of the numerics.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import AbsorbChaosError, ConfigError
from .fpe.solver import FpeConfig, FrozenDrift, solve_linear_fpe, solve_nonlinear_fpe, write_flux_csv
from .harness.outputs import write_simulation
from .harness.report import ExperimentReport
from .harness.sweep import ChaosSweepConfig, run_chaos_sweep
from .harness.validation import CHECKS, LEVELS, validate_all
from .kernels import KernelSpec
from .meanfield import picard_solve
from .particle import SimConfig, simulate

EXIT_OK, EXIT_FAILURE, EXIT_VALIDATION, EXIT_CONFIG = 0, 1, 2, 3


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def _base_dir(path):
    return os.path.dirname(os.path.abspath(path))


def _load_kernel(path):
    if path is None:
        return KernelSpec.zero()
    return KernelSpec.from_dict(_load_json(path), _base_dir(path))


def _write_manifest(out, kind, config, seed, extra=None):
    rep = ExperimentReport.start(kind, config, seed)
    if extra:
        rep.manifest.update(extra)
    rep.write(out)


def cmd_simulate(args):
    d = _load_json(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    d["threads"] = args.threads
    cfg = SimConfig.from_dict(d, _base_dir(args.config))
    write_simulation(simulate(cfg), args.out, with_paths=args.paths)
    print(f"wrote simulation of {cfg.n_particles} particles to {args.out}")
    return EXIT_OK


def cmd_solve_fpe(args):
    cfg = FpeConfig.from_dict(_load_json(args.config))
    kernel = _load_kernel(args.kernel)
    if kernel.family == "zero":
        flow = solve_linear_fpe(cfg, FrozenDrift.zero(cfg))
    else:
        flow = solve_nonlinear_fpe(cfg, kernel)
    flow.to_csv(args.out)
    write_flux_csv(flow, os.path.join(args.out, "flux.csv"))
    _write_manifest(args.out, "solve-fpe", {"fpe": cfg.to_dict(), "kernel": kernel.to_dict()},
                    args.seed or 0, {"alpha_T": float(flow.beta[-1])})
    print(f"alpha({cfg.horizon:g}) = {flow.beta[-1]:.6f}; wrote {args.out}")
    return EXIT_OK


def cmd_fixed_point(args):
    cfg = FpeConfig.from_dict(_load_json(args.config))
    kernel = _load_kernel(args.kernel)
    res = picard_solve(kernel, cfg, tol=args.tol, max_iter=args.max_iter, damping=args.damping)
    res.pair.to_csv(args.out)
    res.write_trace(os.path.join(args.out, "trace.csv"))
    _write_manifest(args.out, "fixed-point",
                    {"fpe": cfg.to_dict(), "kernel": kernel.to_dict(), "tol": args.tol,
                     "max_iter": args.max_iter, "damping": args.damping},
                    args.seed or 0, {"iterations": res.iterations, "segments": res.segments})
    print(f"converged in {res.iterations} iterations ({res.segments} segment(s)); wrote {args.out}")
    return EXIT_OK


def cmd_chaos_sweep(args):
    cfg = ChaosSweepConfig.from_dict(_load_json(args.config), _base_dir(args.config))
    rep = run_chaos_sweep(cfg, threads=args.threads, seed=args.seed)
    rep.write(args.out)
    for row in rep.tables["w1_summary"][1]:
        print("N={} t={:g}: mean W1 {:.5f} (se {:.5f})".format(row[0], row[1], row[3], row[4]))
    return EXIT_OK


def cmd_validate(args):
    only = None if not args.only else args.only.split(",")
    if only:
        unknown = [c for c in only if c not in CHECKS]
        if unknown:
            raise ConfigError(f"unknown check(s) {unknown}; choose from {list(CHECKS)}")
    rep = validate_all(args.level, seed=args.seed or 0, threads=args.threads, only=only, log=print)
    rep.write(args.out)
    print(("all checks passed" if rep.passed else "some checks FAILED") + f"; report in {args.out}")
    return EXIT_OK if rep.passed else EXIT_VALIDATION


def _global_options(defaults: bool):
    # shared by the top-level parser and each subcommand, so the flags may go on either side
    p = argparse.ArgumentParser(add_help=False)
    kw = {} if defaults else {"default": argparse.SUPPRESS}
    p.add_argument("--seed", type=int, help="base seed (overrides the config)", **({"default": None} if defaults else kw))
    p.add_argument("--out", help="output directory", **({"default": "out"} if defaults else kw))
    p.add_argument("--threads", type=int, help="worker threads", **({"default": 1} if defaults else kw))
    p.add_argument("--level", choices=sorted(LEVELS), help="validation level", **({"default": "fast"} if defaults else kw))
    return p


def build_parser():
    parser = argparse.ArgumentParser(prog="absorbchaos", description=__doc__.split("\n\n")[0],
                                     parents=[_global_options(True)])
    sub = parser.add_subparsers(dest="command", required=True)
    common = _global_options(False)

    p = sub.add_parser("simulate", parents=[common], help="simulate the particle system")
    p.add_argument("--config", required=True, help="simulation config JSON")
    p.add_argument("--paths", action="store_true", help="also write paths.csv (large)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve-fpe", parents=[common], help="solve the killed Fokker-Planck equation")
    p.add_argument("--config", required=True, help="FPE grid config JSON")
    p.add_argument("--kernel", help="interaction kernel JSON (default: zero kernel)")
    p.set_defaults(func=cmd_solve_fpe)

    p = sub.add_parser("fixed-point", parents=[common], help="Picard iteration for the mean-field limit")
    p.add_argument("--config", required=True, help="FPE grid config JSON")
    p.add_argument("--kernel", required=True, help="interaction kernel JSON")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--damping", type=float, default=1.0)
    p.set_defaults(func=cmd_fixed_point)

    p = sub.add_parser("chaos-sweep", parents=[common], help="W1 distance to the limit across N")
    p.add_argument("--config", required=True, help="sweep config JSON")
    p.set_defaults(func=cmd_chaos_sweep)

    p = sub.add_parser("validate", parents=[common], help="run the acceptance checks")
    p.add_argument("--only", help="comma-separated subset of: " + ", ".join(CHECKS))
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; report those as configuration errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AbsorbChaosError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
