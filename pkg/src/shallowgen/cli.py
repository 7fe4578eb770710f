"""Command-line entry point: ``shallowgen {experiment,verify,construct,rates}``.

Exit codes: 0 success, 1 a checked property failed, 2 bad input, 3 the
construction is infeasible for the given parameters.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

EXIT_OK, EXIT_PROPERTY, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="base seed (overrides the spec file)")
    parser.add_argument("--threads", type=int, default=default, help="worker processes for the experiment")
    parser.add_argument("--out-dir", default=default, help="directory for output files")
    parser.add_argument("--profile", choices=("desk", "full"), default=default, help="repetitions and MC sample count preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shallowgen", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", parents=[common], help="run the mixture experiment from a spec file")
    p.add_argument("spec", help="YAML experiment spec")
    p.add_argument("--quiet", action="store_true", help="no per-cell progress lines")

    p = sub.add_parser("verify", parents=[common], help="run a property suite")
    p.add_argument("suite", help="suite name")

    p = sub.add_parser("construct", parents=[common], help="build a ReLU generator from a discrete measure")
    p.add_argument("measure", help="measure file: one line per atom, coordinates then weight")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--tau3", type=float, default=1.0)
    p.add_argument("--C4", type=float, default=1.0, help="scale of the support radius a_sigma")
    p.add_argument("--kappa", type=float, default=None, help="ramp width; builds the network straight from the atoms")
    p.add_argument("--out", required=True, help="generator output path")

    p = sub.add_parser("rates", parents=[common], help="rate and sieve schedule table")
    p.add_argument("params", help="YAML file with beta, d, tau constants, C and an optional composite block")
    return parser


def _out_path(args, name):
    base = Path(args.out_dir) if args.out_dir else None
    path = Path(name)
    if base is not None and not path.is_absolute():
        base.mkdir(parents=True, exist_ok=True)
        path = base / path
    return path


def cmd_experiment(args) -> int:
    from ._runtime import keep_heap_warm
    from .experiment import SpecError, default_threads, load_spec, print_progress, run_experiment

    try:
        spec = load_spec(args.spec)
    except SpecError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.profile is not None:
        spec = spec.with_profile(args.profile)
    keep_heap_warm()
    threads = args.threads if args.threads is not None else default_threads()
    result = run_experiment(spec, threads, None if args.quiet else print_progress)
    out_dir = Path(args.out_dir or "results")
    paths = result.write(out_dir)
    failed = [c for c in result.cells if not c.ok]
    print(paths["summary"].read_text(), end="")
    if failed:
        print(f"{len(failed)} of {len(result.cells)} cells failed; see {paths['results']}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES, run_suite

    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_INPUT
    report = run_suite(args.suite, seed=args.seed or 0)
    text = report.to_csv()
    print(text, end="")
    if args.out_dir:
        _out_path(args, f"verify_{args.suite}.csv").write_text(text)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} {args.suite}: {report.pass_count}/{len(report.results)}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_PROPERTY


def diagnostics_path(generator_path) -> Path:
    p = Path(generator_path)
    return p.with_name(p.stem + "_diagnostics.csv")


def cmd_construct(args) -> int:
    from .constructor import construct_direct, theorem1_generator
    from .errors import DomainError, InfeasibleError
    from .measures import DiscreteMeasure

    try:
        m = DiscreteMeasure.load(args.measure)
    except (OSError, ValueError) as exc:
        print(f"{args.measure}: cannot read measure: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        if args.kappa is not None:
            g, diag = construct_direct(m, args.sigma, args.kappa)
        else:
            g, diag = theorem1_generator(m, args.sigma, args.beta, m.dim, args.tau3, C4=args.C4)
    except InfeasibleError as exc:
        print(f"infeasible at stage {exc.stage}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DomainError, ValueError) as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = _out_path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    g.save(out)
    diag.save_csv(diagnostics_path(out))
    print(diag.to_csv(), end="")
    print(f"wrote {out} ({g.d1} hidden units) and {diagnostics_path(out)}", file=sys.stderr)
    return EXIT_OK if diag.all_hold else EXIT_PROPERTY


DEFAULT_N_GRID = tuple(int(round(10**e)) for e in np.arange(3.0, 7.01, 0.5))
_RATE_KEYS = {"beta", "d", "tau0", "tau1", "tau2", "tau3", "C", "n", "composite"}


def load_rate_params(path):
    from .theory import CompositeParams, SmoothnessParams

    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError("params file must be a mapping")
    unknown = set(raw) - _RATE_KEYS
    if unknown:
        raise ValueError(f"unknown keys: {sorted(unknown)}")
    params = SmoothnessParams(**{k: raw[k] for k in ("beta", "d", "tau0", "tau1", "tau2", "tau3") if k in raw})
    comp = None
    if raw.get("composite") is not None:
        comp = CompositeParams(**raw["composite"])
    grid = tuple(raw.get("n", DEFAULT_N_GRID))
    return params, comp, float(raw.get("C", 1.0)), grid


def rates_table(params, comp, C, grid) -> str:
    from .theory import rate_theorem3, schedule_theorem1

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["n", "eps_thm1", "F", "d1", "M", "sigma_min", "eta"]
    if comp is not None:
        header.append("eps_thm3")
    writer.writerow(header)
    for n in grid:
        s = schedule_theorem1(n, params, C)
        row = [n, repr(s.epsilon), repr(s.F), s.d1, repr(s.M), repr(s.sigma_min), repr(s.eta)]
        if comp is not None:
            row.append(repr(rate_theorem3(n, params.beta, comp, C)))
        writer.writerow(row)
    return buf.getvalue()


def cmd_rates(args) -> int:
    from .errors import DomainError

    try:
        params, comp, C, grid = load_rate_params(args.params)
        text = rates_table(params, comp, C, grid)
    except (OSError, TypeError, ValueError, DomainError, yaml.YAMLError) as exc:
        print(f"{args.params}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(text, end="")
    if args.out_dir:
        _out_path(args, "rates.csv").write_text(text)
    return EXIT_OK


COMMANDS = {"experiment": cmd_experiment, "verify": cmd_verify, "construct": cmd_construct, "rates": cmd_rates}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.threads is not None and args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
