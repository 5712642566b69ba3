"""Command-line entry point.

Exit codes: 0 success, 1 a gating check failed, 2 bad configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from ..diagnostics import quadrature_second_moment
from ..errors import ConfigError, ParameterError
from ..samplers import Scheme
from .config import env_out, env_threads, load_spec
from .experiments import run_experiment

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (env TAMED_LANGEVIN_OUT, default ./out)")
    common.add_argument("--seed", type=_u64, help="override the spec's base seed")
    common.add_argument("--threads", type=_positive,
                        help="worker processes (env TAMED_LANGEVIN_THREADS, default 1)")
    common.add_argument("--preset", choices=["paper", "desk"], help="parameter preset")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="tamed-langevin",
                                description="Tamed Langevin samplers: experiments and checks.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="run an experiment spec file")
    r.add_argument("spec", help="path to a TOML spec, or the name of a bundled spec")
    sub.add_parser("check", parents=[common], help="run the property suite")
    rt = sub.add_parser("rates", parents=[common], help="local weak/strong error slopes")
    rt.add_argument("scheme", help="kTULA or tRLMC")
    rt.add_argument("--n-mc", type=_positive, help="Monte Carlo samples per step size")
    q = sub.add_parser("quadrature", parents=[common],
                       help="reference E[X^2] of the double-well marginal")
    q.add_argument("--beta", type=float, default=1.0)
    q.add_argument("--lo", type=float, default=-4.0)
    q.add_argument("--hi", type=float, default=4.0)
    q.add_argument("--grid", type=int, default=20001)
    sub.add_parser("bench-nn", parents=[common], help="neural-network optimiser benchmark")
    return p


def _execute(spec, args) -> int:
    threads = args.threads if args.threads is not None else env_threads()
    out = args.out if args.out is not None else env_out()
    report = run_experiment(spec, threads=threads)
    root = report.write(out)
    for c in report.checks:
        print(c.line())
    for m in report.missing:
        print(f"MISSING {json.dumps(m, sort_keys=True)}")
    print(f"report: {root / 'report.json'}  digest={report.numeric_digest()[:16]}")
    return EXIT_OK if report.passed else EXIT_FAILED


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "quadrature":
            ref = quadrature_second_moment(args.beta, args.lo, args.hi, args.grid)
            print(json.dumps({"beta": ref.beta, "second_moment": ref.second_moment,
                              "mean": ref.mean, "mass": ref.mass, "grid": [ref.grid_lo,
                              ref.grid_hi, ref.grid_n]}, sort_keys=True))
            return EXIT_OK
        if args.command == "run":
            spec = load_spec(args.spec, preset=args.preset, seed=args.seed)
        elif args.command == "check":
            spec = load_spec("property_suite", preset=args.preset, seed=args.seed)
        elif args.command == "bench-nn":
            spec = load_spec("nn_benchmark", preset=args.preset, seed=args.seed)
        else:
            try:
                scheme = Scheme.parse(args.scheme)
            except ParameterError as exc:
                raise ConfigError("rates.scheme", str(exc)) from None
            spec = load_spec("rates", preset=args.preset, seed=args.seed)
            spec.parameters["schemes"] = [scheme.value]
            if args.n_mc is not None:
                spec.parameters["n_mc"] = args.n_mc
            spec.name = f"rates_{scheme.value}"
        return _execute(spec, args)
    except (ConfigError, ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
