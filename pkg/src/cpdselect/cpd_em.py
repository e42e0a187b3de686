"""Fitting the constrained CPD to an empirical PMF by EM under KL divergence.

Every kernel runs over the empirical support only: the ratio tensor
``X_hat / model`` vanishes off the support, so the weight update and all the
MTTKRP products cost ``O(nnz * F)`` per variable.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.model_selection import KFold
from sklearn.utils.validation import check_is_fitted

from ._validation import check_codes, check_labels, infer_cardinalities
from .exceptions import ArgumentError, CpdSelectError, FitError, NumericalError
from .pmf_tensor import (
    SIMPLEX_ATOL,
    CpdModel,
    SparseCountTensor,
    build_empirical_pmf,
    derive_seed,
    random_model,
)

logger = logging.getLogger(__name__)

MASS_FLOOR = 1e-300


@dataclass
class FitConfig:
    """Rank and termination settings for :func:`em_fit`.

    ``init`` may hold a :class:`CpdModel` to start from; otherwise every
    simplex vector is drawn uniform and normalized from ``seed``.
    """

    rank: int
    max_iterations: int = 500
    relative_kl_tolerance: float = 1e-6
    seed: int | None = None
    init: CpdModel | None = None

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ArgumentError(f"rank must be >= 1, got {self.rank}")
        if int(self.max_iterations) < 1:
            raise ArgumentError("max_iterations must be >= 1")
        if not self.relative_kl_tolerance > 0:
            raise ArgumentError("relative_kl_tolerance must be positive")
        self.rank = int(self.rank)
        self.max_iterations = int(self.max_iterations)


@dataclass
class FitReport:
    kl_trace: list = field(default_factory=list)
    iterations_run: int = 0
    termination_reason: str = "max-iterations"
    seed: int | None = None
    clamped_count: int = 0

    def to_dict(self):
        return {
            "kl_trace": [float(v) for v in self.kl_trace],
            "iterations_run": self.iterations_run,
            "termination_reason": self.termination_reason,
            "seed": self.seed,
            "clamped_count": self.clamped_count,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _check_compatible(empirical, model):
    if tuple(empirical.dims) != tuple(model.dims):
        raise ArgumentError(f"empirical dims {empirical.dims} != model dims {model.dims}")


def _support_products(empirical, weights, factors):
    # joint[t, f] = w[f] * prod_n A_n[i_n^t, f] over the support
    joint = np.broadcast_to(weights, (empirical.nnz, weights.shape[0])).copy()
    for n, a in enumerate(factors):
        joint *= a[empirical.indices[:, n]]
    return joint


def kl_divergence(empirical: SparseCountTensor, model: CpdModel) -> float:
    """``sum X_hat log(X_hat / model)`` over the empirical support.

    Returns ``inf`` (with a ``RuntimeWarning``) when the model puts zero mass
    on an observed tuple.
    """
    _check_compatible(empirical, model)
    q = _support_products(empirical, model.weights, model.factors).sum(axis=1)
    if np.any(q <= 0):
        warnings.warn("model assigns zero mass to an observed tuple", RuntimeWarning, stacklevel=2)
        return float("inf")
    p = empirical.values
    return max(float(np.sum(p * (np.log(p) - np.log(q)))), 0.0)


def _mode_selectors(empirical):
    # one-hot (I_n x nnz) matrices so that S_n @ R sums R's rows by mode-n index
    nnz = empirical.nnz
    cols = np.arange(nnz)
    return [
        sparse.csr_matrix(
            (np.ones(nnz), (empirical.indices[:, n], cols)), shape=(d, nnz)
        )
        for n, d in enumerate(empirical.dims)
    ]


def em_fit(empirical: SparseCountTensor, config: FitConfig, label_index=-1, callback=None):
    """Fit a rank-``F`` CPD to ``empirical`` by EM.

    Each sweep forms the support-restricted ratio ``Y = X_hat / model`` and
    updates the weights and all factors from the same ``Y``::

        w[f]      <- w[f] * sum_t Y_t prod_n A_n[i_n^t, f]
        A_n[i, f] <- A_n[i, f] * MTTKRP(Y, A, n)[i, f] * w[f]

    followed by renormalization of every simplex vector. Iteration stops when
    the relative KL change drops below the tolerance or after
    ``max_iterations`` sweeps.

    Parameters
    ----------
    empirical : SparseCountTensor
    config : FitConfig
    label_index : int or None, default=-1
        Position of the label factor in the returned model (``-1`` means the
        last variable).
    callback : callable, optional
        Called as ``callback(iteration, model)`` after every sweep.

    Returns
    -------
    model : CpdModel
    report : FitReport
    """
    total = float(np.sum(empirical.values))
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise ArgumentError(f"empirical PMF sums to {total!r}")
    if label_index is not None and label_index < 0:
        label_index += empirical.n_vars
    if config.init is not None:
        init = config.init
        _check_compatible(empirical, init)
        if init.rank != config.rank:
            raise ArgumentError(f"init rank {init.rank} != configured rank {config.rank}")
    else:
        init = random_model(empirical.dims, config.rank, config.seed, label_index)
    weights = init.weights.copy()
    factors = [a.copy() for a in init.factors]

    selectors = _mode_selectors(empirical)
    x = empirical.values
    report = FitReport(seed=config.seed)
    prev_kl = None
    for it in range(config.max_iterations + 1):
        joint = _support_products(empirical, weights, factors)
        q = joint.sum(axis=1)
        low = q < MASS_FLOOR
        if np.any(low):
            report.clamped_count += int(low.sum())
            q = np.where(low, MASS_FLOOR, q)
        kl = max(float(np.sum(x * (np.log(x) - np.log(q)))), 0.0)
        if not np.isfinite(kl):
            raise NumericalError(f"non-finite KL at iteration {it}", iteration=it)
        report.kl_trace.append(kl)
        if prev_kl is not None:
            if abs(kl - prev_kl) / max(prev_kl, 1e-15) < config.relative_kl_tolerance:
                report.termination_reason = "tolerance"
                break
        if it == config.max_iterations:
            report.termination_reason = "max-iterations"
            break
        prev_kl = kl

        # posterior mass of each latent state at each support point
        resp = joint * (x / q)[:, None]
        new_weights = resp.sum(axis=0)
        new_factors = []
        for n, a in enumerate(factors):
            num = np.asarray(selectors[n] @ resp)
            colsum = num.sum(axis=0)
            live = colsum > 0
            num[:, live] /= colsum[live]
            num[:, ~live] = a[:, ~live]
            new_factors.append(num)
        new_weights /= new_weights.sum()
        if not (np.all(np.isfinite(new_weights)) and all(np.all(np.isfinite(a)) for a in new_factors)):
            raise NumericalError(f"NaN encountered in EM update at iteration {it + 1}", iteration=it + 1)
        weights, factors = new_weights, new_factors
        report.iterations_run = it + 1
        if callback is not None:
            callback(it + 1, CpdModel(weights, factors, label_index, check=False))
    if report.clamped_count:
        logger.info("clamped %d support masses to %g", report.clamped_count, MASS_FLOOR)
    return CpdModel(weights, factors, label_index, check=False), report


def predict_label_posterior(model: CpdModel, feature_codes):
    """``P(Y | observed features)`` under the latent class model.

    ``feature_codes`` is one row or a matrix with one column per feature;
    negative entries are missing and drop out of the product. Rows with no
    observed feature get the label marginal, as does any row whose observed
    combination has zero model probability.
    """
    codes = np.asarray(feature_codes, dtype=np.int64)
    single = codes.ndim == 1
    codes = np.atleast_2d(codes)
    if codes.shape[1] != model.n_features:
        raise ArgumentError(f"expected {model.n_features} feature columns, got {codes.shape[1]}")
    with np.errstate(divide="ignore"):
        logjoint = np.tile(np.log(model.weights), (codes.shape[0], 1))
        for j, v in enumerate(model.feature_vars):
            col = codes[:, j]
            observed = col >= 0
            if np.any(col >= model.dims[v]):
                raise ArgumentError(f"code out of range for feature {j}")
            logjoint[observed] += np.log(model.factors[v][col[observed]])
    shift = logjoint.max(axis=1, keepdims=True)
    dead = ~np.isfinite(shift[:, 0])
    shift[dead] = 0.0
    post = np.exp(logjoint - shift) @ model.label_factor.T
    marginal = model.label_factor @ model.weights
    post[dead] = marginal
    sums = post.sum(axis=1, keepdims=True)
    post = post / sums
    return post[0] if single else post


class LowRankPMF(ClassifierMixin, BaseEstimator):
    """Naive Bayes classifier whose joint PMF is a rank-``F`` CPD.

    Parameters
    ----------
    rank : int, default=5
    max_iter : int, default=500
    tol : float, default=1e-6
        Relative KL change that ends EM.
    cardinalities : sequence of int, optional
        Per-feature alphabet sizes. Inferred from the training codes if omitted.
    random_state : int or None
    """

    def __init__(self, rank=5, max_iter=500, tol=1e-6, cardinalities=None, random_state=None):
        self.rank = rank
        self.max_iter = max_iter
        self.tol = tol
        self.cardinalities = cardinalities
        self.random_state = random_state

    def fit(self, X, y):
        X = check_codes(X, self.cardinalities)
        y = check_labels(y, X.shape[0])
        self.classes_, y_codes = np.unique(y, return_inverse=True)
        cards = tuple(self.cardinalities) if self.cardinalities is not None else infer_cardinalities(X)
        self.cardinalities_ = cards
        self.n_features_in_ = X.shape[1]
        dims = cards + (len(self.classes_),)
        empirical = build_empirical_pmf(np.column_stack([X, y_codes]), dims)
        config = FitConfig(self.rank, self.max_iter, self.tol, self.random_state)
        self.model_, self.fit_report_ = em_fit(empirical, config)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_codes(X, self.cardinalities_, allow_missing=True)
        return predict_label_posterior(self.model_, X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


def cross_validate_rank(
    codes,
    labels,
    candidate_ranks,
    folds=5,
    seed=None,
    cardinalities=None,
    max_iterations=500,
    tolerance=1e-6,
    scorer="posterior",
    knn_budget=None,
):
    """Pick the CPD rank with the lowest mean validation error.

    Validation labels come from the fitted model's own posterior
    (``scorer="posterior"``) or from 1-NN on ``knn_budget`` greedily selected
    features (``scorer="knn"``). Ties go to the smaller rank.

    Returns
    -------
    best_rank : int
    table : dict
        ``{rank: {"mean_error": float, "per_fold_errors": [float, ...]}}``.
    """
    ranks = sorted({int(r) for r in candidate_ranks})
    if not ranks:
        raise ArgumentError("candidate_ranks is empty")
    if int(folds) < 2:
        raise ArgumentError("need at least 2 folds")
    if scorer not in ("posterior", "knn"):
        raise ArgumentError(f"unknown scorer {scorer!r}")
    X = check_codes(codes, cardinalities)
    y = check_labels(labels, X.shape[0])
    if cardinalities is None:
        cardinalities = infer_cardinalities(X)
    cardinalities = tuple(int(c) for c in cardinalities)
    classes = np.unique(y)
    splitter = KFold(n_splits=int(folds), shuffle=True, random_state=derive_seed(seed, 101))
    fold_indices = list(splitter.split(X))

    table = {}
    for rank in ranks:
        errors = []
        for k, (tr, va) in enumerate(fold_indices):
            try:
                clf = LowRankPMF(
                    rank, max_iterations, tolerance, cardinalities, derive_seed(seed, 102, k, rank)
                )
                clf.fit(X[tr], y[tr])
                if scorer == "posterior":
                    pred = clf.predict(X[va])
                else:
                    pred = _knn_fold_predictions(clf, X[tr], y[tr], X[va], knn_budget)
            except CpdSelectError as exc:
                raise FitError(f"rank {rank} failed in fold {k}: {exc}", fold=k) from exc
            errors.append(float(np.mean(pred != y[va])))
        table[rank] = {"mean_error": float(np.mean(errors)), "per_fold_errors": errors}
    best = ranks[0]
    for rank in ranks[1:]:
        if table[rank]["mean_error"] < table[best]["mean_error"]:
            best = rank
    logger.debug("rank CV over %s classes %s -> %d", ranks, classes.tolist(), best)
    return best, table


def _knn_fold_predictions(clf, X_train, y_train, X_val, budget):
    from .evaluation import knn_classify
    from .selection import greedy_select

    if budget is None:
        raise ArgumentError("scorer='knn' needs knn_budget")
    k = min(int(budget), clf.model_.n_features)
    chosen = greedy_select(clf.model_, k, entropy_mode="auto").order
    return knn_classify(X_train, y_train, X_val, chosen)
