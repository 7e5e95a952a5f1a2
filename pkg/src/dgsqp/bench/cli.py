"""Command-line entry point of the bench harness.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for runtime
failures (unwritable output, failed derivative validation, crashed study).
Set ``DGSQP_LOG`` to a logging level name (DEBUG, INFO, ...) for progress output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .export import ExportError, export
from .scenario import ScenarioError, resolve_scenario
from .studies import (
    DEFAULT_EPS0,
    DEFAULT_ETA,
    run_ablation,
    run_mse_comparison,
    run_regularization_grid,
    run_success_study,
)

log = logging.getLogger("dgsqp")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which we reserve for runtime failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return values


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common(p: argparse.ArgumentParser, count: int | None = None) -> None:
    p.add_argument("--config", default="scenario1", help="scenario TOML file or bundled scenario name")
    p.add_argument("--seed", type=int, help="study seed (default: the scenario's)")
    if count is not None:
        p.add_argument("--count", type=int, default=count, help="number of initial conditions")
    p.add_argument("--horizon", type=_int_list, help="horizon(s), comma separated")
    p.add_argument("--out", help="output file")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dgsqp", description="DG-SQP game solver benchmarks")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one sampled initial condition and print the trace")
    _common(p)
    p.add_argument("--ic", type=int, default=0, help="index of the sampled initial condition")
    p.add_argument("--formulation", choices=("exact", "approximate"))

    p = sub.add_parser("study", help="Monte-Carlo studies")
    kinds = p.add_subparsers(dest="study", required=True, parser_class=_Parser)
    _common(kinds.add_parser("success", help="success rate per horizon"), count=50)
    _common(kinds.add_parser("ablation", help="full solver vs merit and line-search ablations"), count=20)
    q = kinds.add_parser("reggrid", help="success rate over (eps0, eta)")
    _common(q, count=20)
    q.add_argument("--eps0", type=_float_list, default=list(DEFAULT_EPS0))
    q.add_argument("--eta", type=_float_list, default=list(DEFAULT_ETA))
    _common(kinds.add_parser("mse", help="exact vs approximate equilibrium inputs"), count=20)

    p = sub.add_parser("sample-ics", help="write sampled joint initial conditions")
    _common(p, count=50)

    p = sub.add_parser("validate-derivatives", help="finite-difference audit of every derivative block")
    p.add_argument("--count", type=int, default=100, help="random iterates per game family")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=_int_list, default=[4])
    return parser


def _configure_logging() -> None:
    level = os.environ.get("DGSQP_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _emit(obj, args) -> None:
    if args.out:
        export(obj, args.out, args.format)
        print(f"wrote {args.out}")


def _print_summary(summary: dict) -> None:
    print(json.dumps(summary, indent=1, sort_keys=True, default=str))


def _single_horizon(args) -> int | None:
    if args.horizon is None:
        return None
    if len(args.horizon) != 1:
        raise UsageError("this study takes a single horizon")
    return args.horizon[0]


def cmd_solve(args) -> int:
    from dgsqp.solver import TRACE_COLUMNS, solve

    scenario = resolve_scenario(args.config)
    ics = scenario.sample(args.ic + 1, args.seed)
    N = _single_horizon(args) or max(scenario.horizons)
    game = scenario.build(ics[args.ic], N, args.formulation)
    result = solve(game, scenario.warm_start(game), scenario.solver)
    print(",".join(TRACE_COLUMNS))
    for row in result.trace_rows():
        print(",".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in row))
    r = result.residuals
    print(
        f"# {game.name} N={N} IC {args.ic}: {result.status} after {result.iterations} iterations "
        f"({result.wall_time:.2f} s); residuals {r.stationarity:.2e} {r.feasibility:.2e} {r.complementarity:.2e}"
    )
    if args.out:
        result.write_trace(args.out)
    return EXIT_OK


def cmd_study(args) -> int:
    scenario = resolve_scenario(args.config)
    if args.count < 0:
        raise UsageError("--count must be non-negative")
    if args.study == "success":
        study = run_success_study(scenario, args.count, args.horizon, seed=args.seed, parallel=args.parallel)
        _print_summary(study.summary)
        _emit(study, args)
    elif args.study == "ablation":
        study = run_ablation(scenario, args.count, _single_horizon(args), seed=args.seed, parallel=args.parallel)
        _print_summary(study.summary)
        _emit(study, args)
    elif args.study == "reggrid":
        if not args.eps0 or not args.eta:
            raise UsageError("--eps0 and --eta need at least one value each")
        study = run_regularization_grid(
            scenario, args.eps0, args.eta, args.count, _single_horizon(args), args.seed, args.parallel
        )
        _print_summary(study.summary)
        _emit(study, args)
    else:
        report = run_mse_comparison(scenario, args.count, _single_horizon(args), args.seed, args.parallel)
        _print_summary(report.summary())
        _emit(report, args)
    return EXIT_OK


def cmd_sample(args) -> int:
    import csv

    scenario = resolve_scenario(args.config)
    ics = scenario.sample(args.count, args.seed)
    rows = [[k] + [float(v) for v in x0] for k, x0 in enumerate(ics)]
    if not args.out:
        for row in rows:
            print(" ".join(f"{v:.6f}" for v in row[1:]))
        return EXIT_OK
    try:
        if args.format == "json":
            with open(args.out, "w") as fh:
                json.dump({"scenario": scenario.id, "model": scenario.model, "ics": [r[1:] for r in rows]}, fh, indent=1)
        else:
            n = len(rows[0]) - 1 if rows else 0
            with open(args.out, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["ic_index"] + [f"x{j}" for j in range(n)])
                writer.writerows(rows)
    except OSError as exc:
        raise ExportError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import REL_TOL, validate_derivatives

    reports = validate_derivatives(args.count, args.seed, args.horizon[0])
    ok = True
    for r in reports:
        errs = " ".join(f"{k}={v:.2e}" for k, v in r.max_error.items())
        print(f"{'PASS' if r.passed else 'FAIL'} {r.family} ({r.model}, {r.iterates} iterates): {errs} identity={r.identity_error:.1e}")
        ok &= r.passed
    print(f"tolerance {REL_TOL:g}: {'all passed' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_RUNTIME


COMMANDS = {"solve": cmd_solve, "study": cmd_study, "sample-ics": cmd_sample, "validate-derivatives": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging()
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, UsageError) as exc:
        print(f"dgsqp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExportError, OSError) as exc:
        print(f"dgsqp: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("command failed")
        print(f"dgsqp: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
