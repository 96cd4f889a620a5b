"""Command-line driver.

    dplbfgs run --problem primal-l1-logistic --algorithm dplbfgs-ls --data a.svm
    dplbfgs reference --problem dual-sqhinge-svm --data a.svm --out a.ref
    dplbfgs synth --n 500 --d 100 --out a.svm

Exit codes: 0 success, 1 usage, 2 data, 3 solver failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

from .baselines import CatalystConfig, KAPPA_PRESETS, bda_run, catalyst_run, sparsa_direct_run
from .datasets import ParseError, dump_libsvm, load_libsvm, make_synthetic
from .problems import L1Logistic, SquaredHingeDual, make_problem
from .reference import DEFAULT_ITERS, compute_reference, format_reference, read_reference
from .solver import InvariantViolation, SolverConfig, dplbfgs_run
from .subsolver import SparsaConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3

PROBLEMS = (L1Logistic.name, SquaredHingeDual.name)
ALGORITHMS = ("dplbfgs", "dplbfgs-ls", "dplbfgs-tr", "sparsa-direct", "bda", "bda-catalyst")
CSV_HEADER = "iter,obj,rel_err,step_size,sparsa_iters,comm_rounds,comm_scalars_over_d,elapsed_s"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive(kind):
    def conv(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value

    return conv


def build_parser():
    parser = _Parser(prog="dplbfgs", description="Distributed proximal L-BFGS solvers")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="solve and write a per-iteration CSV trace")
    run.add_argument("--problem", choices=PROBLEMS, required=True)
    run.add_argument("--algorithm", choices=ALGORITHMS, default="dplbfgs-ls")
    run.add_argument("--variant", choices=("ls", "tr"), default=None,
                     help="globalization for --algorithm dplbfgs (default ls)")
    run.add_argument("--data", required=True)
    run.add_argument("--workers", type=_positive(int), default=1)
    run.add_argument("--c-param", type=_positive(float), default=1.0)
    run.add_argument("--memory", type=_positive(int), default=10)
    run.add_argument("--eps1", type=_positive(float), default=1e-2)
    run.add_argument("--max-sparsa", type=_positive(int), default=100)
    run.add_argument("--max-iter", type=_positive(int), default=1000)
    run.add_argument("--target", type=_positive(float), default=None,
                     help="stop at this relative objective error (needs --ref-obj)")
    run.add_argument("--tol", type=_positive(float), default=None,
                     help="stationarity tolerance used when no reference is given")
    run.add_argument("--ref-obj", default=None,
                     help="reference objective file (or a literal number)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--kappa", type=float, default=None,
                     help="Catalyst kappa, or use --preset")
    run.add_argument("--preset", choices=sorted(KAPPA_PRESETS), default=None)
    run.add_argument("--warmup", type=int, default=None,
                     help="plain BDA iterations before Catalyst starts")
    run.add_argument("--track-primal", action="store_true",
                     help="dual DPLBFGS: keep the best recovered primal iterate")
    run.add_argument("--out", default="-")

    ref = sub.add_parser("reference", help="compute F* by proximal gradient")
    ref.add_argument("--problem", choices=PROBLEMS, required=True)
    ref.add_argument("--data", required=True)
    ref.add_argument("--c-param", type=_positive(float), default=1.0)
    ref.add_argument("--iters", type=_positive(int), default=DEFAULT_ITERS)
    ref.add_argument("--out", default="-")

    syn = sub.add_parser("synth", help="write a random LIBSVM data set")
    syn.add_argument("--n", type=_positive(int), required=True)
    syn.add_argument("--d", type=_positive(int), required=True)
    syn.add_argument("--density", type=_positive(float), default=0.3)
    syn.add_argument("--correlation", type=float, default=0.0)
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--out", default="-")
    return parser


def _open_out(path):
    if path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline="\n"), True


def _load_reference(text):
    if os.path.exists(text):
        return read_reference(text)
    try:
        return float(text)
    except ValueError:
        raise FileNotFoundError(f"reference file not found: {text}") from None


def write_trace(stream, result, d):
    stream.write(CSV_HEADER + "\n")
    for r in result.records:
        stream.write(
            f"{r.iteration},{r.obj:.12e},{r.rel_err:.12e},{r.step_size:.12e},"
            f"{r.sparsa_iters},{r.rounds},{r.scalars / d:.12e},{r.elapsed:.12e}\n"
        )
    led = result.ledger
    stream.write(
        f"# status={result.status} iterations={len(result.records) - 1} "
        f"rounds={led.rounds} scalars={led.scalars_transmitted} "
        f"latency_units={led.modeled_latency_units:.12e}\n"
    )
    if result.message:
        stream.write(f"# message={result.message}\n")
    if result.pocket is not None and result.pocket.best_w is not None:
        stream.write(f"# pocket_primal_obj={result.pocket.best_obj:.12e}\n")


def _catalyst_config(args, c):
    if args.preset is not None:
        cfg = CatalystConfig.preset(args.preset, c)
        kappa = cfg.kappa if args.kappa is None else args.kappa
        warmup = cfg.warmup if args.warmup is None else args.warmup
    else:
        if args.kappa is None:
            raise UsageError("bda-catalyst needs --kappa or --preset")
        kappa, warmup = args.kappa, args.warmup or 0
    try:
        return CatalystConfig(kappa=kappa, mu=1.0 / (2.0 * c), warmup=warmup)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_run(args):
    if args.algorithm in ("bda", "bda-catalyst") and args.problem != SquaredHingeDual.name:
        raise UsageError(f"{args.algorithm} requires --problem {SquaredHingeDual.name}")
    if args.variant is not None and args.algorithm != "dplbfgs":
        raise UsageError("--variant only applies to --algorithm dplbfgs")
    if args.target is not None and args.ref_obj is None:
        raise UsageError("--target needs --ref-obj")
    catalyst = _catalyst_config(args, args.c_param) if args.algorithm == "bda-catalyst" else None
    f_ref = _load_reference(args.ref_obj) if args.ref_obj is not None else None
    data = load_libsvm(args.data)
    if args.workers > data.n or (args.problem == L1Logistic.name and args.workers > data.d):
        raise UsageError(f"--workers {args.workers} exceeds the data size")
    problem = make_problem(args.problem, data, args.c_param, args.workers)

    sparsa = SparsaConfig(eps1=args.eps1, max_iters=args.max_sparsa)
    if args.algorithm.startswith("dplbfgs"):
        variant = args.variant or ("tr" if args.algorithm == "dplbfgs-tr" else "ls")
        config = SolverConfig(
            variant=variant, memory=args.memory, sparsa=sparsa, max_iter=args.max_iter,
            target=args.target, seed=args.seed, track_primal=args.track_primal,
            stationarity_tol=args.tol if f_ref is None else None,
        )
        result = dplbfgs_run(problem, config, f_ref=f_ref)
    elif args.algorithm == "sparsa-direct":
        result = sparsa_direct_run(problem, args.max_iter, sparsa, f_ref=f_ref, target=args.target)
    elif args.algorithm == "bda":
        result = bda_run(problem, args.max_iter, f_ref=f_ref, target=args.target, seed=args.seed)
    else:
        result = catalyst_run(problem, catalyst, args.max_iter, f_ref=f_ref,
                              target=args.target, seed=args.seed)

    stream, close = _open_out(args.out)
    try:
        write_trace(stream, result, data.d)
    finally:
        if close:
            stream.close()
    if result.status == "aborted":
        print(f"dplbfgs: solver aborted: {result.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_reference(args):
    data = load_libsvm(args.data)
    problem = make_problem(args.problem, data, args.c_param, 1)
    ref = compute_reference(problem, iters=args.iters)
    stream, close = _open_out(args.out)
    try:
        stream.write(format_reference(ref))
    finally:
        if close:
            stream.close()
    return EXIT_OK


def cmd_synth(args):
    if not 0.0 <= args.correlation < 1.0 or args.density > 1.0:
        raise UsageError("need 0 <= correlation < 1 and density <= 1")
    data = make_synthetic(args.n, args.d, args.density, args.seed,
                          correlation=args.correlation)
    stream, close = _open_out(args.out)
    try:
        dump_libsvm(data, stream)
    finally:
        if close:
            stream.close()
    return EXIT_OK


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        handler = {"run": cmd_run, "reference": cmd_reference, "synth": cmd_synth}
        return handler[args.command](args)
    except UsageError as exc:
        print(f"dplbfgs: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, OSError, UnicodeDecodeError) as exc:
        print(f"dplbfgs: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # reference files and dataset invariants
        print(f"dplbfgs: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantViolation, ArithmeticError, RuntimeError) as exc:
        print(f"dplbfgs: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
