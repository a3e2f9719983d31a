"""Batch command-line interface.

Four subcommands over CSV inputs:

    fit        estimate a propensity model, emit the fit as JSON
    test       run the double-projection specification test (and,
               optionally, single-projection baselines) on a dataset
    ate        stabilized IPW effect for a pair of treatment levels,
               with a percentile-bootstrap confidence interval
    simulate   run the Monte Carlo study grid, emit JSON and CSV reports

Exit codes: 0 success; 2 data problems (unreadable input, bad bindings,
malformed values, bad configuration); 3 numeric failure (singular score
cross-product, separation); 4 optimizer non-convergence.

Conventions worth knowing:

* An intercept column is added automatically for binary and multinomial
  fits unless --no-intercept; ordered fits never get one because the
  cutpoints play that role.
* The kernel is built from the covariates WITHOUT the intercept column: a
  constant coordinate contributes nothing to any pairwise difference and
  only rescales the statistic and its bootstrap distribution together, so
  p-values are unchanged either way. --kernel-include-intercept restores
  the constant coordinate for strict replication of index-with-constant
  setups.
* The seed is always resolved (drawn from the OS if not given) and echoed
  in the output, so any run can be replayed exactly.
* JSON numbers carry 17 significant digits; rerunning a command with the
  same seed reproduces the output byte for byte apart from wall_time_s.

Environment: GPSCHECK_THREADS sets the default kernel worker count,
GPSCHECK_CACHE_DIR enables the binary kernel cache.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from ._json import dumps
from .baselines import FAMILY_BASELINES, KIND_VARIANTS, SpTestSpec, sp_bootstrap
from .dptest import TestConfig, kernel_covariates, run_test
from .effects import percentile_bootstrap
from .errors import DataError, GpscheckError, NotConvergedError, NumericError
from .estimation import fit_mle
from .geometry import cached_an_matrix
from .models import FAMILIES, Dataset
from .rng import resolve_seed
from .simulation import run_experiment

__all__ = ["main", "validate_document"]

_FAMILY_SYNONYMS = {
    "logit": "binary_logit",
    "probit": "binary_probit",
    "binary": "binary_logit",
    "multinomial": "multinomial_logit",
    "ordered": "ordered_logit",
}

_FULL_SCALE = {"reps": 1000, "B": 999, "ns": (200, 400, 800), "dgps": tuple(range(1, 16))}


def _resolve_family(name: str) -> str:
    family = _FAMILY_SYNONYMS.get(name, name)
    if family not in FAMILIES:
        raise DataError(
            f"unknown family {name!r}; expected one of {FAMILIES} "
            f"or a synonym {tuple(_FAMILY_SYNONYMS)}"
        )
    return family


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise DataError(f"environment variable {name} must be an integer, got {raw!r}")


# ---------------------------------------------------------------------------
# CSV input
# ---------------------------------------------------------------------------


def _read_table(path: str) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file, expected a CSV header")
            rows = [row for row in reader if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}")
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicated column names in header")
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {i + 1} has {len(row)} fields, header has {len(header)}"
            )
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, rows


def _column_index(header: list[str], name: str) -> int:
    try:
        return header.index(name)
    except ValueError:
        raise DataError(f"column {name!r} not found; available: {header}")


def _float_column(rows: list[list[str]], idx: int, name: str) -> np.ndarray:
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        try:
            out[i] = float(row[idx])
        except ValueError:
            raise DataError(
                f"column {name!r}, row {i + 1}: cannot parse {row[idx]!r} as a number"
            )
    return out


def _int_column(rows: list[list[str]], idx: int, name: str) -> np.ndarray:
    values = _float_column(rows, idx, name)
    rounded = np.rint(values)
    bad = np.nonzero(values != rounded)[0]
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"column {name!r}, row {i + 1}: treatment must be integer-valued, got {values[i]!r}"
        )
    if values.min() < 0:
        i = int(np.argmin(values))
        raise DataError(f"column {name!r}, row {i + 1}: treatment levels must be >= 0")
    return rounded.astype(np.int64)


def _load_dataset(args) -> tuple[Dataset, list[str]]:
    header, rows = _read_table(args.input)
    if args.covariates:
        names = [c.strip() for c in args.covariates.split(",") if c.strip()]
        if not names:
            raise DataError("--covariates given but no names parsed")
    else:
        exclude = {args.treatment, getattr(args, "outcome", None)}
        names = [c for c in header if c not in exclude]
        if not names:
            raise DataError("no covariate columns left after removing bindings")
    t_idx = _column_index(header, args.treatment)
    T = _int_column(rows, t_idx, args.treatment)
    columns = [_float_column(rows, _column_index(header, c), c) for c in names]
    X = np.column_stack(columns)
    family = _resolve_family(args.family)
    if not args.no_intercept and family != "ordered_logit":
        X = np.column_stack([np.ones(len(rows)), X])
        names = ["(intercept)"] + names
    Y = None
    outcome = getattr(args, "outcome", None)
    if outcome:
        Y = _float_column(rows, _column_index(header, outcome), outcome)
    return Dataset(X=X, T=T, Y=Y), names


# ---------------------------------------------------------------------------
# result documents
# ---------------------------------------------------------------------------


def _fit_doc(fit) -> dict:
    return {
        "theta_hat": fit.theta_hat.tolist(),
        "loglik": fit.loglik,
        "gradient_norm": fit.gradient_norm,
        "iterations": fit.iterations,
        "converged": fit.converged,
    }


def _test_doc(result) -> dict:
    doc = {
        "kind": result.kind,
        "statistic": result.statistic,
        "p_value": result.p_value,
        "critical_values": {str(a): v for a, v in result.critical_values.items()},
        "B": result.B,
        "seed": result.seed,
        "multiplier_law": result.multiplier_law,
        "family": result.family,
        "levels": list(result.levels),
        "weights": list(result.weights),
        "n": result.n,
        "d_x": result.d_x,
    }
    if result.delta_cond:
        doc["delta_cond"] = list(result.delta_cond)
    if result.fit is not None:
        doc["fit"] = _fit_doc(result.fit)
    return doc


_REQUIRED_FIELDS = {
    "fit": {
        "command": str,
        "seed": int,
        "family": str,
        "n": int,
        "d_x": int,
        "fit": dict,
    },
    "test": {
        "command": str,
        "statistic": float,
        "p_value": float,
        "critical_values": dict,
        "B": int,
        "seed": int,
        "multiplier_law": str,
        "family": str,
        "levels": list,
        "n": int,
        "d_x": int,
        "fit": dict,
    },
    "ate": {
        "command": str,
        "pair": list,
        "estimate": float,
        "se": float,
        "ci": list,
        "B": int,
        "alpha": float,
        "seed": int,
        "family": str,
        "n": int,
    },
    "simulate": {
        "command": str,
        "master_seed": int,
        "reps": int,
        "B": int,
        "ate_B": int,
        "alphas": list,
        "cells": list,
    },
}

_FIT_FIELDS = {"theta_hat": list, "loglik": float, "converged": bool}


def validate_document(doc: dict) -> None:
    """Check a result document against the tool's own output contract.

    Raises DataError on a missing field or a wrong type; numeric fields
    accept ints where floats are expected because JSON does not keep the
    distinction for round values.
    """
    if not isinstance(doc, dict):
        raise DataError(f"document must be an object, got {type(doc).__name__}")
    command = doc.get("command")
    if command not in _REQUIRED_FIELDS:
        raise DataError(f"unknown or missing command field: {command!r}")
    for field, kind in _REQUIRED_FIELDS[command].items():
        if field not in doc:
            raise DataError(f"{command} document is missing field {field!r}")
        value = doc[field]
        if kind is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif kind is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, kind)
        if not ok:
            raise DataError(
                f"{command} document field {field!r} has type "
                f"{type(value).__name__}, expected {kind.__name__}"
            )
    if command in ("fit", "test"):
        fit = doc["fit"]
        for field, kind in _FIT_FIELDS.items():
            if field not in fit:
                raise DataError(f"fit block is missing field {field!r}")
            value = fit[field]
            if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
                continue
            if not isinstance(value, kind):
                raise DataError(f"fit block field {field!r} has wrong type")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _parse_levels(raw: str | None) -> tuple[int, ...] | None:
    if raw is None:
        return None
    try:
        return tuple(int(part) for part in raw.split(","))
    except ValueError:
        raise DataError(f"cannot parse levels {raw!r}; expected comma-separated integers")


def _parse_floats(raw: str | None) -> tuple[float, ...] | None:
    if raw is None:
        return None
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError:
        raise DataError(f"cannot parse {raw!r}; expected comma-separated numbers")


def cmd_fit(args) -> dict:
    seed = resolve_seed(args.seed)
    family = _resolve_family(args.family)
    data, names = _load_dataset(args)
    fit = fit_mle(family, data, tol=args.tol, max_iter=args.max_iter)
    return {
        "command": "fit",
        "seed": seed,
        "family": family,
        "n": data.n,
        "d_x": data.d_x,
        "J": data.J,
        "covariates": names,
        "fit": _fit_doc(fit),
    }


def cmd_test(args) -> dict:
    seed = resolve_seed(args.seed)
    family = _resolve_family(args.family)
    data, names = _load_dataset(args)
    threads = args.threads if args.threads else _env_int("GPSCHECK_THREADS", 1)
    kernel = None
    kernel_X = None
    if args.kernel_include_intercept:
        kernel_X = data.X
    cache_dir = args.cache_dir or os.environ.get("GPSCHECK_CACHE_DIR")
    if cache_dir:
        kx = kernel_X if kernel_X is not None else kernel_covariates(data.X)
        kernel = cached_an_matrix(
            kx, dup_tol=args.dup_tol, cache_dir=cache_dir, workers=threads
        )
    config = TestConfig(
        levels=_parse_levels(args.levels),
        weights=_parse_floats(args.weights),
        B=args.bootstrap,
        seed=seed,
        law=args.law,
        dup_tol=args.dup_tol,
        include_reference=args.include_reference,
        tol=args.tol,
        max_iter=args.max_iter,
        kernel=kernel,
        kernel_X=kernel_X if kernel is None else None,
        workers=threads,
    )
    result = run_test(data, family, config)
    doc = {"command": "test"}
    doc.update(_test_doc(result))
    if args.baseline != "none":
        if args.baseline == "auto":
            kinds = list(FAMILY_BASELINES[family])
        else:
            kinds = [k.strip() for k in args.baseline.split(",")]
        baselines = {}
        for kind in kinds:
            if kind not in KIND_VARIANTS:
                raise DataError(
                    f"unknown baseline {kind!r}; expected one of {sorted(KIND_VARIANTS)}"
                )
            spec = SpTestSpec(
                variant=KIND_VARIANTS[kind], B=args.bootstrap, seed=seed, law=args.law
            )
            sp = sp_bootstrap(family, result.fit.theta_hat, data, spec)
            baselines[kind] = {
                "statistic": sp.statistic,
                "p_value": sp.p_value,
                "critical_values": {str(a): v for a, v in sp.critical_values.items()},
                "levels": list(sp.levels),
            }
        doc["baseline"] = baselines
    return doc


def cmd_ate(args) -> dict:
    seed = resolve_seed(args.seed)
    family = _resolve_family(args.family)
    if not args.outcome:
        raise DataError("ate requires --outcome naming the outcome column")
    data, _ = _load_dataset(args)
    pair = _parse_levels(args.pair)
    if pair is None or len(pair) != 2:
        raise DataError(f"--pair must be two comma-separated levels, got {args.pair!r}")
    result = percentile_bootstrap(
        data, family, pair, B=args.bootstrap, alpha=args.alpha, seed=seed
    )
    return {
        "command": "ate",
        "pair": list(result.pair),
        "estimate": result.estimate,
        "se": result.se,
        "ci": list(result.ci),
        "B": result.B,
        "alpha": args.alpha,
        "seed": result.seed,
        "dropped": result.dropped,
        "family": family,
        "n": data.n,
    }


def cmd_simulate(args) -> dict:
    seed = resolve_seed(args.seed)
    if args.full_scale:
        dgps = _parse_levels(args.dgp) or _FULL_SCALE["dgps"]
        ns = _parse_levels(args.n) or _FULL_SCALE["ns"]
        reps = args.reps if args.reps is not None else _FULL_SCALE["reps"]
        B = args.bootstrap if args.bootstrap is not None else _FULL_SCALE["B"]
    else:
        dgps = _parse_levels(args.dgp)
        ns = _parse_levels(args.n)
        if dgps is None or ns is None:
            raise DataError("simulate requires --dgp and --n (or --full-scale)")
        reps = args.reps if args.reps is not None else 500
        B = args.bootstrap if args.bootstrap is not None else 299
    statistics = None
    if args.statistics:
        statistics = tuple(k.strip() for k in args.statistics.split(","))
    alphas = _parse_floats(args.alphas) or (0.10, 0.05, 0.01)
    report = run_experiment(
        dgps,
        ns,
        reps=reps,
        B=B,
        alphas=alphas,
        statistics=statistics,
        master_seed=seed,
        parallelism=args.parallelism,
        ate_B=args.ate_bootstrap,
        include_ate=not args.no_ate,
    )
    if args.csv:
        rows = report.to_csv_rows()
        with open(args.csv, "w", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerows(rows)
    doc = {"command": "simulate"}
    doc.update(report.to_json_dict())
    return doc


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpscheck",
        description="Specification tests and IPW effects for generalized propensity scores.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p, outcome_required=False):
        p.add_argument("--input", required=True, help="CSV file with a header row")
        p.add_argument("--family", required=True, help="model family (or synonym: logit, probit, multinomial, ordered)")
        p.add_argument("--treatment", default="T", help="treatment column name (default T)")
        p.add_argument(
            "--covariates",
            default=None,
            help="comma-separated covariate columns; default: all except treatment/outcome",
        )
        p.add_argument(
            "--outcome",
            default=None,
            required=outcome_required,
            help="outcome column name",
        )
        p.add_argument(
            "--no-intercept",
            action="store_true",
            help="do not prepend a constant column for binary/multinomial fits",
        )
        p.add_argument("--tol", type=float, default=1e-8, help="optimizer tolerance")
        p.add_argument("--max-iter", type=int, default=100, help="optimizer iteration cap")
        p.add_argument("--seed", type=int, default=None, help="random seed; drawn if omitted")
        p.add_argument("--output", default=None, help="write JSON here instead of stdout")

    p_fit = sub.add_parser("fit", help="fit a propensity model")
    add_data_args(p_fit)
    p_fit.set_defaults(handler=cmd_fit)

    p_test = sub.add_parser("test", help="run the specification test")
    add_data_args(p_test)
    p_test.add_argument("--bootstrap", type=int, default=999, help="bootstrap replicates B")
    p_test.add_argument("--law", default="mammen", choices=("mammen", "rademacher"))
    p_test.add_argument("--levels", default=None, help="comma-separated treatment levels to aggregate")
    p_test.add_argument("--weights", default=None, help="comma-separated level weights")
    p_test.add_argument(
        "--include-reference",
        action="store_true",
        help="include level 0 in the default level set (multinomial)",
    )
    p_test.add_argument(
        "--kernel-include-intercept",
        action="store_true",
        help="build the kernel on the covariates including the constant column",
    )
    p_test.add_argument("--dup-tol", type=float, default=1e-12, help="duplicate-point tolerance")
    p_test.add_argument(
        "--baseline",
        default="none",
        help="'none', 'auto', or comma-separated single-projection kinds "
        f"({', '.join(sorted(KIND_VARIANTS))})",
    )
    p_test.add_argument("--threads", type=int, default=None, help="kernel build workers")
    p_test.add_argument("--cache-dir", default=None, help="kernel cache directory")
    p_test.set_defaults(handler=cmd_test)

    p_ate = sub.add_parser("ate", help="stabilized IPW treatment effect")
    add_data_args(p_ate, outcome_required=True)
    p_ate.add_argument("--pair", required=True, help="treatment levels to compare, e.g. 1,0")
    p_ate.add_argument("--bootstrap", type=int, default=499, help="bootstrap resamples")
    p_ate.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level")
    p_ate.set_defaults(handler=cmd_ate)

    p_sim = sub.add_parser("simulate", help="run the Monte Carlo study")
    p_sim.add_argument("--dgp", default=None, help="comma-separated design ids in 1..15")
    p_sim.add_argument("--n", default=None, help="comma-separated sample sizes")
    p_sim.add_argument("--reps", type=int, default=None, help="Monte Carlo replicates per cell")
    p_sim.add_argument("--bootstrap", type=int, default=None, help="test bootstrap replicates")
    p_sim.add_argument("--ate-bootstrap", type=int, default=499, help="effect bootstrap resamples")
    p_sim.add_argument("--alphas", default=None, help="comma-separated test levels")
    p_sim.add_argument(
        "--statistics",
        default=None,
        help="comma-separated statistic kinds (dpro plus single-projection kinds); default: all that apply",
    )
    p_sim.add_argument("--no-ate", action="store_true", help="skip effect estimation")
    p_sim.add_argument(
        "--full-scale",
        action="store_true",
        help="reps=1000, B=999, and all designs/sizes unless overridden",
    )
    p_sim.add_argument("--parallelism", type=int, default=1, help="worker processes")
    p_sim.add_argument("--seed", type=int, default=None, help="master seed; drawn if omitted")
    p_sim.add_argument("--output", default=None, help="write the JSON report here")
    p_sim.add_argument("--csv", default=None, help="also write the CSV report here")
    p_sim.set_defaults(handler=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        doc = args.handler(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except NotConvergedError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return 4
    except GpscheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    doc["wall_time_s"] = time.perf_counter() - t0
    text = dumps(doc)
    if args.output:
        try:
            Path(args.output).write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"error: cannot write {args.output}: {exc}", file=sys.stderr)
            return 2
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
