"""Batch command-line front end.

Exit codes: 0 success, 1 runtime or numerical failure (including a failed
verification), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cpd_em import FitConfig, cross_validate_rank, em_fit
from .data_pipeline import (
    SplitSpec,
    discretize_equal_width,
    ingest_csv,
    load_schema,
    run_experiment,
    split_indices,
)
from .evaluation import accuracy, knn_classify
from .exceptions import ArgumentError, CapacityError, CpdSelectError, SchemaError
from .pmf_tensor import CpdModel, derive_seed, random_model
from .selection import SelectionResult, greedy_select, lazy_greedy_select, remodeling_select
from .verify import all_passed, verify_model

logger = logging.getLogger("cpdselect")

USAGE_ERRORS = (ArgumentError, SchemaError, CapacityError)


def _ints(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _emit(payload, out):
    text = json.dumps(payload, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _load_table(args):
    if args.schema is None or args.data is None:
        raise ArgumentError("--data and --schema are required")
    schema = load_schema(args.schema)
    return ingest_csv(args.data, schema)


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise ArgumentError(f"model file not found: {path}")
    return json.loads(path.read_text())


def cmd_fit(args):
    table = _load_table(args)
    dataset = discretize_equal_width(table, args.bins)
    config = FitConfig(args.rank, args.max_iter, args.tol, args.seed)
    model, report = em_fit(dataset.empirical_pmf(), config)
    payload = model.to_dict(seed=args.seed, fit_report=report)
    payload["feature_names"] = dataset.feature_names
    payload["bin_edges"] = {str(j): e.tolist() for j, e in dataset.bin_edges.items() if e is not None}
    _emit(payload, args.out)
    return 0


def cmd_select(args):
    if args.model is None:
        raise ArgumentError("--model is required")
    model = CpdModel.from_dict(_load_model(args.model))
    if args.budget is None or not 1 <= args.budget <= model.n_features:
        raise ArgumentError(f"--budget must lie in [1, {model.n_features}]")
    if args.strategy == "greedy":
        result = greedy_select(model, args.budget, args.entropy, args.samples, args.seed)
    elif args.strategy == "lazy":
        result = lazy_greedy_select(model, args.budget, args.entropy, args.samples, args.seed)
    else:
        table = _load_table(args)
        dataset = discretize_equal_width(table, args.bins)
        rank = args.rank or model.rank
        config = FitConfig(rank, args.max_iter, args.tol)
        result = remodeling_select(
            dataset.codes,
            dataset.labels,
            args.budget,
            rank,
            dataset.cardinalities,
            config,
            args.entropy,
            args.samples,
            args.seed,
        )
    _emit(result.to_dict(), args.out)
    return 0


def cmd_evaluate(args):
    table = _load_table(args)
    if args.selection is not None:
        order = SelectionResult.from_dict(json.loads(Path(args.selection).read_text())).order
    elif args.features is not None:
        order = args.features
    else:
        raise ArgumentError("--selection or --features is required")
    if not order:
        raise ArgumentError("empty feature list")
    spec = SplitSpec(args.train_fraction, args.runs, args.seed)
    acc = np.zeros((args.runs, len(order)))
    for run in range(args.runs):
        tr, te = split_indices(table.n_rows, spec, run)
        dataset = discretize_equal_width(table, args.bins, tr)
        for k in range(1, len(order) + 1):
            pred = knn_classify(dataset.codes[tr], dataset.labels[tr], dataset.codes[te], order[:k])
            acc[run, k - 1] = accuracy(pred, dataset.labels[te])
    _emit(
        {
            "features": [int(j) for j in order],
            "runs": args.runs,
            "accuracy_by_K": acc.mean(axis=0).tolist(),
            "std_by_K": acc.std(axis=0).tolist(),
        },
        args.out,
    )
    return 0


def cmd_cv_rank(args):
    table = _load_table(args)
    dataset = discretize_equal_width(table, args.bins)
    best, cv = cross_validate_rank(
        dataset.codes,
        dataset.labels,
        args.ranks,
        args.folds,
        args.seed,
        dataset.cardinalities,
        args.max_iter,
        args.tol,
    )
    _emit({"best_rank": best, "table": {str(r): v for r, v in cv.items()}}, args.out)
    return 0


def cmd_experiment(args):
    table = _load_table(args)
    spec = SplitSpec(args.train_fraction, args.runs, derive_seed(args.seed, 1))
    n_jobs = 1 if args.strict_deterministic else args.threads
    report = run_experiment(
        table,
        spec,
        ranks=args.ranks,
        K_max=args.budget,
        strategy=args.strategy,
        seed=args.seed,
        bins=args.bins,
        folds=args.folds,
        entropy=args.entropy,
        T=args.samples,
        max_iter=args.max_iter,
        tol=args.tol,
        n_jobs=n_jobs,
    )
    _emit(report.to_dict(), args.out)
    if args.tsv is not None:
        Path(args.tsv).write_text(report.to_tsv())
    return 0


def cmd_verify(args):
    if args.model is not None:
        models = [CpdModel.from_dict(_load_model(args.model), check=False)]
    else:
        dims = [args.cardinality] * args.n_features + [args.label_cardinality]
        models = [
            random_model(dims, args.rank or 3, derive_seed(args.seed, i), label_index=len(dims) - 1)
            for i in range(args.random)
        ]
    reports = [verify_model(m, args.budget, args.samples, args.seed) for m in models]
    checks = sorted({name for r in reports for name in r})
    summary = {
        name: all(r[name]["passed"] for r in reports if name in r) for name in checks
    }
    payload = {"models": len(models), "checks": summary, "passed": all(map(all_passed, reports))}
    if len(models) == 1:
        payload["detail"] = reports[0]
    _emit(payload, args.out)
    return 0 if payload["passed"] else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="cpdselect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--data")
        p.add_argument("--schema")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")
        p.add_argument("--bins", type=int, default=5)
        p.add_argument("--max-iter", type=int, default=500)
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--strict-deterministic", action="store_true")
        p.add_argument("-v", "--verbose", action="store_true")

    def selection_flags(p):
        p.add_argument("--budget", type=int)
        p.add_argument("--strategy", choices=("greedy", "lazy", "remodel"), default="greedy")
        p.add_argument("--entropy", choices=("exact", "mc", "auto"), default="auto")
        p.add_argument("--samples", type=int, default=5000)

    p = sub.add_parser("fit", help="fit a CPD model of a discretized dataset")
    common(p)
    p.add_argument("--rank", type=int, required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="greedy feature selection on a fitted model")
    common(p)
    selection_flags(p)
    p.add_argument("--model")
    p.add_argument("--rank", type=int)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="1-NN accuracy of a feature order")
    common(p)
    p.add_argument("--selection")
    p.add_argument("--features", type=_ints)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--train-fraction", type=float, default=0.70)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cv-rank", help="choose the CPD rank by cross-validation")
    common(p)
    p.add_argument("--ranks", type=_ints, default=[5, 10, 15, 20, 30])
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_cv_rank)

    p = sub.add_parser("experiment", help="repeated split / fit / select / 1-NN protocol")
    common(p)
    selection_flags(p)
    p.add_argument("--ranks", type=_ints, default=[5, 10, 15, 20, 30])
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--train-fraction", type=float, default=0.70)
    p.add_argument("--tsv")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify", help="run the oracle suite on a model")
    common(p)
    p.add_argument("--model")
    p.add_argument("--random", type=int, default=1, help="number of random models when --model is absent")
    p.add_argument("--n-features", type=int, default=5)
    p.add_argument("--cardinality", type=int, default=3)
    p.add_argument("--label-cardinality", type=int, default=2)
    p.add_argument("--rank", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--samples", type=int, default=5000)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        _report_error(exc)
        return 2
    except (CpdSelectError, ArithmeticError, OSError) as exc:
        _report_error(exc)
        return 1


def _report_error(exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")


if __name__ == "__main__":
    sys.exit(main())
