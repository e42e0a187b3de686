"""Tabular ingestion, equal-width discretization, splitting and the experiment loop.

The experiment follows the usual protocol for this kind of study: repeated
random 70/30 splits, CPD rank picked by cross-validation on the training part,
greedy selection up to ``K_max`` features, and 1-NN accuracy of every prefix of
the selected order next to a random-subset control evaluated on the same split.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .cpd_em import FitConfig, cross_validate_rank, em_fit
from .evaluation import AccuracyCurve, accuracy, knn_classify
from .exceptions import ArgumentError, CpdSelectError, ParseError, SchemaError
from .pmf_tensor import build_empirical_pmf, derive_seed, rng_stream
from .selection import greedy_select, lazy_greedy_select, remodeling_select

logger = logging.getLogger(__name__)

COLUMN_KINDS = ("continuous", "categorical", "label")
MISSING_TOKENS = {"", "?", "na", "nan", "null"}


def load_schema(path):
    """Read a JSON ``{column: kind}`` mapping."""
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"schema not found: {path}")
    try:
        schema = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema {path} is not valid JSON: {exc}") from exc
    return _check_schema(schema)


def _check_schema(schema):
    if not isinstance(schema, dict) or not schema:
        raise SchemaError("schema must be a nonempty JSON object")
    for name, kind in schema.items():
        if kind not in COLUMN_KINDS:
            raise SchemaError(f"unknown column type {kind!r} for column {name!r}")
    labels = [n for n, k in schema.items() if k == "label"]
    if len(labels) != 1:
        raise SchemaError(f"schema needs exactly one label column, found {len(labels)}")
    return dict(schema)


@dataclass
class RawTable:
    """Parsed CSV: continuous columns as floats, categorical ones as dense codes.

    ``categories[name]`` lists the original strings in first-appearance order,
    so code ``c`` of that column stands for ``categories[name][c]``.
    """

    names: list
    kinds: dict
    columns: dict
    categories: dict = field(default_factory=dict)

    @property
    def label_name(self):
        return next(n for n in self.names if self.kinds[n] == "label")

    @property
    def feature_names(self):
        return [n for n in self.names if self.kinds[n] != "label"]

    @property
    def n_rows(self):
        return len(self.columns[self.names[0]])

    def equals(self, other):
        if self.names != other.names or self.kinds != other.kinds or self.categories != other.categories:
            return False
        return all(np.array_equal(self.columns[n], other.columns[n]) for n in self.names)


def ingest_csv(path, schema) -> RawTable:
    """Parse a headed CSV according to ``schema`` (a mapping or a schema path)."""
    if not isinstance(schema, dict):
        schema = load_schema(schema)
    schema = _check_schema(schema)
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    header = [h.strip() for h in rows[0]]
    for name in header:
        if name not in schema:
            raise SchemaError(f"column {name!r} is not declared in the schema")
    for name in schema:
        if name not in header:
            raise SchemaError(f"schema column {name!r} is missing from the data")
    body = rows[1:]
    if not body:
        raise ParseError("no data rows", line=2)

    raw = {name: [] for name in header}
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}", line=lineno)
        for name, cell in zip(header, row):
            cell = cell.strip()
            if cell.lower() in MISSING_TOKENS:
                raise ParseError(f"line {lineno}: missing value in column {name!r}", line=lineno)
            raw[name].append((lineno, cell))

    columns, categories = {}, {}
    for name in header:
        if schema[name] == "continuous":
            values = np.empty(len(raw[name]))
            for i, (lineno, cell) in enumerate(raw[name]):
                try:
                    values[i] = float(cell)
                except ValueError:
                    raise ParseError(
                        f"line {lineno}: {cell!r} in column {name!r} is not a number", line=lineno
                    ) from None
                if not math.isfinite(values[i]):
                    raise ParseError(f"line {lineno}: non-finite value in {name!r}", line=lineno)
            columns[name] = values
        else:
            seen = {}
            codes = [seen.setdefault(cell, len(seen)) for _, cell in raw[name]]
            columns[name] = np.array(codes, dtype=np.int64)
            categories[name] = list(seen)
    return RawTable(header, {n: schema[n] for n in header}, columns, categories)


def write_csv(table: RawTable, path):
    """Inverse of :func:`ingest_csv` for the same schema."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.names)
        for i in range(table.n_rows):
            row = []
            for name in table.names:
                v = table.columns[name][i]
                if table.kinds[name] == "continuous":
                    row.append(repr(float(v)))
                else:
                    row.append(table.categories[name][int(v)])
            writer.writerow(row)


class EqualWidthDiscretizer(TransformerMixin, BaseEstimator):
    """Code each column by its equal-width bin over the fitted ``[min, max]``.

    ``code = floor((x - min) / width)`` clamped to ``[0, n_bins - 1]``, so
    values outside the fitted range land in the boundary bins. A constant
    column has zero width and maps everything to bin 0.
    """

    def __init__(self, n_bins=5):
        self.n_bins = n_bins

    def fit(self, X, y=None):
        if int(self.n_bins) < 2:
            raise ArgumentError("n_bins must be >= 2")
        X = check_array(X, dtype=float)
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        self.width_ = (self.max_ - self.min_) / self.n_bins
        self.constant_ = self.width_ == 0
        if np.any(self.constant_):
            warnings.warn(
                f"constant columns {np.flatnonzero(self.constant_).tolist()} map to a single bin",
                RuntimeWarning,
                stacklevel=2,
            )
        self.bin_edges_ = [
            None if c else np.linspace(lo, hi, self.n_bins + 1)
            for lo, hi, c in zip(self.min_, self.max_, self.constant_)
        ]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "width_")
        X = check_array(X, dtype=float)
        safe = np.where(self.constant_, 1.0, self.width_)
        codes = np.floor((X - self.min_) / safe)
        codes = np.clip(codes, 0, self.n_bins - 1).astype(np.int64)
        codes[:, self.constant_] = 0
        return codes


@dataclass(eq=False)
class DiscreteDataset:
    """Integer-coded features and labels with their alphabet sizes.

    ``bin_edges`` maps a feature position to the ``bins + 1`` edges used to
    code it (continuous features only).
    """

    codes: np.ndarray
    labels: np.ndarray
    cardinalities: tuple
    label_cardinality: int
    bin_edges: dict = field(default_factory=dict)
    feature_names: list | None = None

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        self.label_cardinality = int(self.label_cardinality)
        if self.codes.ndim != 2 or self.codes.shape[0] != self.labels.shape[0]:
            raise ArgumentError("codes must be (M, N) with one label per row")
        if len(self.cardinalities) != self.codes.shape[1]:
            raise ArgumentError("one cardinality per feature required")
        if self.codes.size and (
            np.any(self.codes < 0) or np.any(self.codes >= np.array(self.cardinalities)[None, :])
        ):
            raise ArgumentError("feature code outside its cardinality")
        if np.any(self.labels < 0) or np.any(self.labels >= self.label_cardinality):
            raise ArgumentError("label code outside the label cardinality")
        for j, edges in self.bin_edges.items():
            if edges is not None and np.any(np.diff(edges) <= 0):
                raise ArgumentError(f"bin edges of feature {j} are not strictly increasing")
        if self.feature_names is None:
            self.feature_names = [f"x{j}" for j in range(self.codes.shape[1])]

    @property
    def n_samples(self):
        return self.codes.shape[0]

    @property
    def n_features(self):
        return self.codes.shape[1]

    @property
    def dims(self):
        return self.cardinalities + (self.label_cardinality,)

    def joint_codes(self):
        return np.column_stack([self.codes, self.labels])

    def empirical_pmf(self):
        return build_empirical_pmf(self.joint_codes(), self.dims)

    def subset(self, rows):
        return DiscreteDataset(
            self.codes[rows],
            self.labels[rows],
            self.cardinalities,
            self.label_cardinality,
            self.bin_edges,
            self.feature_names,
        )


def discretize_equal_width(table: RawTable, bins=5, fit_rows=None) -> DiscreteDataset:
    """Discretize the continuous columns of ``table``; edges come from ``fit_rows`` only.

    Categorical columns pass through with their ingestion codes and
    cardinalities.
    """
    if int(bins) < 2:
        raise ArgumentError("bins must be >= 2")
    if fit_rows is None:
        fit_rows = np.arange(table.n_rows)
    fit_rows = np.asarray(fit_rows)
    if fit_rows.size == 0:
        raise ArgumentError("fit_rows is empty")
    names = table.feature_names
    codes = np.empty((table.n_rows, len(names)), dtype=np.int64)
    cards, edges = [], {}
    for j, name in enumerate(names):
        col = table.columns[name]
        if table.kinds[name] == "continuous":
            disc = EqualWidthDiscretizer(bins).fit(col[fit_rows, None])
            codes[:, j] = disc.transform(col[:, None])[:, 0]
            edges[j] = disc.bin_edges_[0]
            cards.append(int(bins))
        else:
            codes[:, j] = col
            cards.append(len(table.categories[name]))
    label = table.label_name
    return DiscreteDataset(
        codes,
        table.columns[label],
        tuple(cards),
        len(table.categories[label]),
        edges,
        list(names),
    )


@dataclass
class SplitSpec:
    train_fraction: float = 0.70
    monte_carlo_runs: int = 10
    seed: int | None = None

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ArgumentError("train_fraction must lie in (0, 1)")
        if int(self.monte_carlo_runs) < 1:
            raise ArgumentError("monte_carlo_runs must be >= 1")


def split_indices(n_rows, spec: SplitSpec, run_index):
    """Train/test row indices for one Monte-Carlo run (unstratified)."""
    if n_rows < 2:
        raise ArgumentError("need at least 2 rows to split")
    if not 0 <= run_index < spec.monte_carlo_runs:
        raise ArgumentError(f"run_index {run_index} outside [0, {spec.monte_carlo_runs})")
    perm = rng_stream(spec.seed, 11, run_index).permutation(n_rows)
    n_train = int(math.floor(spec.train_fraction * n_rows))
    return perm[:n_train], perm[n_train:]


def split(dataset: DiscreteDataset, spec: SplitSpec, run_index):
    tr, te = split_indices(dataset.n_samples, spec, run_index)
    return dataset.subset(tr), dataset.subset(te)


@dataclass
class ExperimentReport:
    config: dict
    per_run: list
    mean_accuracy_by_K: list
    std_by_K: list
    random_control_by_K: list

    def to_dict(self):
        return {
            "config": self.config,
            "per_run": self.per_run,
            "mean_accuracy_by_K": self.mean_accuracy_by_K,
            "std_by_K": self.std_by_K,
            "random_control_by_K": self.random_control_by_K,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def curve(self):
        ks = range(1, len(self.mean_accuracy_by_K) + 1)
        return AccuracyCurve(
            [(k, m, s) for k, m, s in zip(ks, self.mean_accuracy_by_K, self.std_by_K)],
            list(self.random_control_by_K),
        )

    def to_tsv(self):
        return self.curve().to_tsv()


def _select(model, train, K, strategy, rank, entropy, T, seed, max_iter, tol):
    if strategy == "greedy":
        return greedy_select(model, K, entropy, T, seed)
    if strategy == "lazy":
        return lazy_greedy_select(model, K, entropy, T, seed)
    if strategy == "remodel":
        config = FitConfig(rank, max_iter, tol)
        return remodeling_select(
            train.codes, train.labels, K, rank, train.cardinalities, config, entropy, T, seed
        )
    raise ArgumentError(f"unknown strategy {strategy!r}")


def _one_run(data, spec, run, ranks, K_max, strategy, seed, bins, folds, entropy, T, max_iter, tol, metric):
    n_rows = data.n_rows if isinstance(data, RawTable) else data.n_samples
    tr, te = split_indices(n_rows, spec, run)
    dataset = discretize_equal_width(data, bins, tr) if isinstance(data, RawTable) else data
    train, test = dataset.subset(tr), dataset.subset(te)
    try:
        cv_table = None
        if len(ranks) > 1:
            rank, cv_table = cross_validate_rank(
                train.codes,
                train.labels,
                ranks,
                folds,
                derive_seed(seed, 21, run),
                train.cardinalities,
                max_iter,
                tol,
            )
        else:
            rank = ranks[0]
        config = FitConfig(rank, max_iter, tol, derive_seed(seed, 22, run))
        model, report = em_fit(train.empirical_pmf(), config)
        selection = _select(
            model, train, K_max, strategy, rank, entropy, T, derive_seed(seed, 23, run), max_iter, tol
        )
    except CpdSelectError as exc:
        raise type(exc)(f"run {run}: {exc}") from exc

    control_order = rng_stream(seed, 24, run).permutation(dataset.n_features)
    acc, ctrl = [], []
    for k in range(1, K_max + 1):
        pred = knn_classify(train.codes, train.labels, test.codes, selection.order[:k], metric)
        acc.append(accuracy(pred, test.labels))
        pred = knn_classify(train.codes, train.labels, test.codes, control_order[:k], metric)
        ctrl.append(accuracy(pred, test.labels))
    return {
        "run": run,
        "rank": int(rank),
        "cv": None if cv_table is None else {str(r): v for r, v in cv_table.items()},
        "fit_iterations": report.iterations_run,
        "final_kl": report.kl_trace[-1],
        "selection": selection.to_dict(),
        "accuracy_by_K": acc,
        "control_order": [int(j) for j in control_order[:K_max]],
        "control_by_K": ctrl,
    }


def run_experiment(
    data,
    spec: SplitSpec,
    ranks=(5, 10, 15, 20, 30),
    K_max=10,
    strategy="greedy",
    seed=None,
    bins=5,
    folds=5,
    entropy="auto",
    T=5000,
    max_iter=500,
    tol=1e-6,
    metric="hamming",
    n_jobs=1,
) -> ExperimentReport:
    """Repeat split / rank CV / fit / select / 1-NN over ``spec.monte_carlo_runs`` runs.

    ``data`` is either a :class:`RawTable` (continuous columns are discretized
    per run with edges from that run's training rows) or an already coded
    :class:`DiscreteDataset`. Runs are independent and may execute in parallel
    via ``n_jobs`` without changing the result.
    """
    n_features = len(data.feature_names)
    if not 1 <= int(K_max) <= n_features:
        raise ArgumentError(f"K_max {K_max} outside [1, {n_features}]")
    ranks = sorted({int(r) for r in ranks})
    if not ranks:
        raise ArgumentError("ranks is empty")
    args = (ranks, int(K_max), strategy, seed, bins, folds, entropy, T, max_iter, tol, metric)
    runs = Parallel(n_jobs=n_jobs)(
        delayed(_one_run)(data, spec, r, *args) for r in range(spec.monte_carlo_runs)
    )
    acc = np.array([r["accuracy_by_K"] for r in runs])
    ctrl = np.array([r["control_by_K"] for r in runs])
    config = {
        "train_fraction": spec.train_fraction,
        "monte_carlo_runs": spec.monte_carlo_runs,
        "split_seed": spec.seed,
        "ranks": ranks,
        "K_max": int(K_max),
        "strategy": strategy,
        "seed": seed,
        "bins": bins,
        "folds": folds,
        "entropy": entropy,
        "T": T,
        "max_iter": max_iter,
        "tol": tol,
        "metric": metric,
    }
    return ExperimentReport(
        config,
        runs,
        acc.mean(axis=0).tolist(),
        acc.std(axis=0).tolist(),
        ctrl.mean(axis=0).tolist(),
    )
