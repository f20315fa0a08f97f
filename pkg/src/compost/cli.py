"""``compost`` command line.

Exit codes: 0 success, 2 usage error, 3 unparsable input file, 4 invalid
values (negative counts, zero totals, bad weights or lambda), 5 solver
failure, 6 file not readable or writable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .domain import DomainError, as_counts, as_weights, uniform_weights
from .estimator import _auto_collapse, fit_two_stage, sscomp
from .io import TableParseError, read_table, write_atomic, write_table
from .selection import DEFAULT_ALPHA, LambdaGrid, fit_fixed
from .simharness import StudyConfig, run_study
from .solver import ConvergenceError, FitConfig

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INVALID = 4
EXIT_CONVERGENCE = 5
EXIT_IO = 6


class UsageError(Exception):
    pass


def _lambda_arg(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"lambda must be 'auto' or a number, got {text!r}") from None


def _grid(args) -> LambdaGrid:
    try:
        return LambdaGrid.from_bounds(args.grid_min, args.grid_max, args.grid_step)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _add_fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="CV correction multiplier (default 1.4)")
    p.add_argument("--grid-min", type=float, default=-6.0, help="smallest log10(lambda)")
    p.add_argument("--grid-max", type=float, default=2.0, help="largest log10(lambda)")
    p.add_argument("--grid-step", type=float, default=0.1, help="log10(lambda) spacing")
    p.add_argument("--max-iterations", type=int, default=50, help="Newton iteration budget per fit")


def _fit_config(args) -> FitConfig:
    try:
        return FitConfig(max_iterations=args.max_iterations)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _collapse_flag(value: str, k, w) -> bool:
    if value == "auto":
        return _auto_collapse(k, w)
    return value == "on"


def _write_json(path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_estimate(args) -> int:
    table = read_table(args.input)
    try:
        column, name = table.column(args.column)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    k = as_counts(column)
    if args.weights:
        wt = read_table(args.weights)
        if wt.shape[1] != 1:
            raise UsageError("weights file must have a single column")
        w = as_weights(wt.values[:, 0], k.size)
    else:
        w = uniform_weights(k.size)
    collapse = _collapse_flag(args.zero_collapse, k, w)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "input": str(args.input),
        "column": name,
        "m": int(k.size),
        "n": float(k.sum()),
        "zero_cells": int(np.sum(k == 0)),
        "weights": "file" if args.weights else "uniform",
        "zero_collapse": collapse,
    }
    if args.lam == "auto":
        if args.alpha < 1:
            raise DomainError("alpha must be at least 1")
        p_hat, trace = sscomp(k, w, args.alpha, _grid(args), _fit_config(args), zero_collapse=collapse)
        chosen = trace.records[trace.chosen_index]
        summary.update(
            selection="cv",
            alpha=args.alpha,
            **{"lambda": chosen.lam},
            log10_lambda=chosen.log10_lam,
            iterations=chosen.iterations,
            gradient_norm=chosen.gradient_norm,
            cv_trace=trace.to_dict()["records"],
        )
    else:
        fit = fit_fixed(k, w, args.lam, _fit_config(args), zero_collapse=collapse)
        p_hat = fit.p_hat
        summary.update(
            selection="fixed",
            **{"lambda": fit.lam},
            log10_lambda=math.log10(fit.lam),
            iterations=fit.iterations,
            gradient_norm=fit.final_gradient_norm,
            cv_trace=None,
        )
    write_table(args.output, p_hat, table.row_labels, [name or "p_hat"] if table.column_names else None, table.label_header)
    if args.summary:
        _write_json(args.summary, summary)
    return EXIT_OK


def cmd_estimate_matrix(args) -> int:
    table = read_table(args.input)
    K = table.values
    if np.any(K < 0):
        r, c = np.argwhere(K < 0)[0]
        raise DomainError(f"negative count at row {r + 1}, column {c + 1}")
    totals = K.sum(axis=0)
    if np.any(totals <= 0):
        c = int(np.flatnonzero(totals <= 0)[0])
        label = table.column_names[c] if table.column_names else str(c)
        raise DomainError(f"column {label!r} has zero total")
    if args.alpha < 1:
        raise DomainError("alpha must be at least 1")
    res = fit_two_stage(K, args.alpha, _grid(args), _fit_config(args), threads=args.threads)
    names = table.column_names or tuple(str(i) for i in range(K.shape[1]))
    write_table(args.output, res.probs, table.row_labels, table.column_names, table.label_header)
    if args.summary:
        columns = []
        for i, trace in enumerate(res.traces):
            rec = trace.records[trace.chosen_index]
            columns.append(
                {
                    "column": names[i],
                    "n": float(totals[i]),
                    "zero_cells": int(np.sum(K[:, i] == 0)),
                    "lambda": rec.lam,
                    "log10_lambda": rec.log10_lam,
                    "iterations": rec.iterations,
                    "prior_kl": float(res.prior_kl[i]),
                }
            )
        prior_rec = res.prior_trace.records[res.prior_trace.chosen_index]
        _write_json(
            args.summary,
            {
                "schema_version": SCHEMA_VERSION,
                "command": "estimate-matrix",
                "input": str(args.input),
                "m": int(K.shape[0]),
                "s": int(K.shape[1]),
                "alpha": args.alpha,
                "prior": {"lambda": prior_rec.lam, "log10_lambda": prior_rec.log10_lam},
                "columns": columns,
            },
        )
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        config = StudyConfig(
            m=args.m,
            s=args.s,
            sigma2_between=args.sigma2,
            n_total=args.N,
            seed=args.seed,
            grid=_grid(args),
            alpha=args.alpha,
            split_concentration=args.concentration,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    report = run_study(config, _fit_config(args), threads=args.threads)
    write_atomic(args.output, report.to_json())
    if args.csv:
        write_atomic(args.csv, report.to_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compost", description="Composition estimation from count data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate one composition from a counts column")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--weights", help="base-measure weights, one per row")
    p.add_argument("--column", help="column name or 0-based index when the input has several")
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default="auto", help="'auto' (CV) or a fixed value")
    p.add_argument("--summary", help="JSON summary path")
    p.add_argument("--zero-collapse", choices=("auto", "on", "off"), default="auto")
    _add_fit_options(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("estimate-matrix", help="two-stage estimate for a counts matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--summary", help="JSON summary path")
    p.add_argument("--threads", type=int, default=None, help="parallel column fits (default COMPOST_THREADS or 1)")
    _add_fit_options(p)
    p.set_defaults(func=cmd_estimate_matrix)

    p = sub.add_parser("simulate", help="run the seeded CV-versus-oracle simulation study")
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--s", type=int, default=50)
    p.add_argument("--N", type=int, default=10000)
    p.add_argument("--seed", type=int, default=StudyConfig.seed)
    p.add_argument("--sigma2", type=float, default=0.25, help="between-column variance of log probabilities")
    p.add_argument("--concentration", type=float, default=25.0, help="Dirichlet concentration of the size split")
    p.add_argument("--output", required=True, help="JSON report path")
    p.add_argument("--csv", help="tidy CSV report path")
    p.add_argument("--threads", type=int, default=None)
    _add_fit_options(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"compost: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TableParseError as exc:
        print(f"compost: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DomainError as exc:
        print(f"compost: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConvergenceError as exc:
        print(f"compost: solver failed: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"compost: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
