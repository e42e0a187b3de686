"""Cardinality-constrained maximization of ``g(S) = I(X_S; Z)``.

``g`` is monotone submodular under the latent class model, so forward greedy
selection is within ``1 - 1/e`` of the best size-``K`` subset. The lazy
variant keeps stale marginal gains as upper bounds and refreshes only the
candidates that could still win.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import xlogy
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_budget, check_codes, check_labels, infer_cardinalities
from .cpd_em import FitConfig, cross_validate_rank, em_fit
from .exceptions import ArgumentError, CapacityError, CpdSelectError, SelectionError
from .info_theory import DEFAULT_CAP, NEGATIVE_MI_ATOL, PROB_FLOOR, mi_subset_latent
from .pmf_tensor import (
    CpdModel,
    build_empirical_pmf,
    derive_seed,
    draw_latent,
    draw_variable,
    latent_joint,
)

logger = logging.getLogger(__name__)

TIE_ATOL = 1e-12
# numerical slack on submodular upper bounds
BOUND_SLACK = 1e-9
EXHAUSTIVE_CAP = 10**5


@dataclass
class SelectionResult:
    order: list
    gains: list
    final_value: float
    strategy: str
    entropy_mode: str
    seed: int | None = None
    per_step: list = field(default_factory=list)
    evaluations: int = 0

    def to_dict(self):
        d = asdict(self)
        d["order"] = [int(j) for j in self.order]
        d["gains"] = [float(g) for g in self.gains]
        d["final_value"] = float(self.final_value)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _snap(gain):
    return 0.0 if abs(gain) <= TIE_ATOL else gain


class _SubsetScorer:
    """Evaluates ``g(S + {s})`` for every candidate of one greedy step.

    Exact mode caches ``P(x_S, z)`` for the current subset so each candidate
    costs a single matrix product. Monte-Carlo mode reuses one set of latent
    and per-variable draws for all candidates (common random numbers), and
    caches the product of the selected factors at the sampled codes.
    """

    def __init__(self, model, mode, T, seed, cap):
        if mode not in ("exact", "mc", "auto"):
            raise ArgumentError(f"unknown entropy mode {mode!r}")
        self.model = model
        self.mode = mode
        self.T = int(T)
        self.seed = seed
        self.cap = cap
        fv = model.feature_vars
        self._vars = fv
        self._cond = [float(-np.sum(xlogy(model.factors[v], model.factors[v]) @ model.weights)) for v in fv]
        self._z = None
        self._draws = {}

    def _grid(self, features):
        return math.prod(self.model.dims[self._vars[j]] for j in features)

    def begin(self, selected):
        self.selected = list(selected)
        self.cond_sum = sum(self._cond[j] for j in self.selected)
        step_mode = self.mode
        if step_mode == "auto":
            rest = [j for j in range(self.model.n_features) if j not in self.selected]
            widest = max((self._grid(self.selected + [j]) for j in rest), default=1)
            step_mode = "exact" if widest <= self.cap else "mc"
        self.step_mode = step_mode
        model = self.model
        if step_mode == "exact":
            self._joint = latent_joint(model, [self._vars[j] for j in self.selected])
        else:
            if self._z is None:
                self._z = draw_latent(model, self.T, self.seed)
            prod = np.ones((self.T, model.rank))
            for j in self.selected:
                prod *= model.factors[self._vars[j]][self._sample(j)]
            self._prod = prod
        return step_mode

    def _sample(self, j):
        if j not in self._draws:
            self._draws[j] = draw_variable(self.model, self._vars[j], self._z, self.seed)
        return self._draws[j]

    def value(self, j):
        a = self.model.factors[self._vars[j]]
        if self.step_mode == "exact":
            if self._grid(self.selected + [j]) > self.cap:
                raise CapacityError(f"exact evaluation of {self.selected + [j]} exceeds cap {self.cap}")
            p = self._joint @ a.T
            h = float(-np.sum(xlogy(p, p)))
        else:
            p = (self._prod * a[self._sample(j)]) @ self.model.weights
            h = -float(np.mean(np.log(np.maximum(p, PROB_FLOOR))))
        g = h - self.cond_sum - self._cond[j]
        if self.step_mode == "exact":
            if g < -NEGATIVE_MI_ATOL:
                raise ArithmeticError(f"negative mutual information {g!r}")
            g = max(g, 0.0)
        return g


def _argmax_smallest(values, exact):
    best = max(values.values())
    thresh = best - TIE_ATOL if exact else best
    return min(j for j, v in values.items() if v >= thresh)


def greedy_select(model: CpdModel, K, entropy_mode="exact", T=5000, seed=None, cap=DEFAULT_CAP):
    """Forward greedy maximization of ``I(X_S; Z)`` with ``|S| = K``.

    Every step evaluates ``I(X_{S+s}; Z)`` for all remaining features and adds
    the maximizer; ties within ``1e-12`` go to the smallest feature index.
    ``entropy_mode="auto"`` enumerates while the widest candidate grid fits in
    ``cap`` cells and switches to Monte-Carlo with ``T`` samples after that.
    """
    K = check_budget(K, model.n_features)
    scorer = _SubsetScorer(model, entropy_mode, T, seed, cap)
    selected, gains, per_step = [], [], []
    current = 0.0
    evaluations = 0
    for step in range(K):
        mode = scorer.begin(selected)
        values = {j: scorer.value(j) for j in range(model.n_features) if j not in selected}
        evaluations += len(values)
        chosen = _argmax_smallest(values, mode == "exact")
        gain = _snap(values[chosen] - current)
        current += gain
        selected.append(chosen)
        gains.append(gain)
        per_step.append({"candidates_evaluated": len(values), "switch_mode": mode})
        logger.debug("greedy step %d (%s): feature %d gain %.6g", step, mode, chosen, gain)
    return SelectionResult(
        selected, gains, current, "greedy", _mode_label(per_step), seed, per_step, evaluations
    )


def _mode_label(per_step):
    modes = {p["switch_mode"] for p in per_step}
    return modes.pop() if len(modes) == 1 else "auto"


def lazy_greedy_select(model: CpdModel, K, entropy_mode="exact", T=5000, seed=None, cap=DEFAULT_CAP):
    """Lazy greedy with stale-gain upper bounds; same output as :func:`greedy_select`.

    A candidate is re-evaluated only while its stale gain could still reach
    the tie window of the best refreshed value. Monte-Carlo noise breaks the
    bound argument, so ``"mc"`` runs plain greedy, and so does ``"auto"``
    unless every size-``K`` grid fits in ``cap``.
    """
    K = check_budget(K, model.n_features)
    if entropy_mode == "auto":
        widest = math.prod(sorted((model.dims[v] for v in model.feature_vars), reverse=True)[:K])
        if widest <= cap:
            entropy_mode = "exact"
    if entropy_mode != "exact":
        warnings.warn(
            "lazy greedy needs exact entropies; running plain greedy instead",
            RuntimeWarning,
            stacklevel=2,
        )
        return greedy_select(model, K, entropy_mode, T, seed, cap)
    scorer = _SubsetScorer(model, "exact", T, seed, cap)
    heap = [(-math.inf, j) for j in range(model.n_features)]
    heapq.heapify(heap)
    selected, gains, per_step = [], [], []
    current = 0.0
    evaluations = 0
    for step in range(K):
        scorer.begin(selected)
        fresh = {}
        if step > 0 and -heap[0][0] <= 0.0:
            # every stale gain is zero; monotonicity pins the true gains at zero
            chosen = min(j for _, j in heap)
            heap = [(b, j) for b, j in heap if j != chosen]
            heapq.heapify(heap)
            gain = 0.0
        else:
            while heap:
                neg_bound, j = heap[0]
                if fresh:
                    best = max(fresh.values())
                    if current - neg_bound + BOUND_SLACK < best - TIE_ATOL:
                        break
                heapq.heappop(heap)
                fresh[j] = scorer.value(j)
            evaluations += len(fresh)
            chosen = _argmax_smallest(fresh, True)
            gain = _snap(fresh[chosen] - current)
            for j, v in fresh.items():
                if j != chosen:
                    heapq.heappush(heap, (-_snap(v - current), j))
        current += gain
        selected.append(chosen)
        gains.append(gain)
        per_step.append({"candidates_evaluated": len(fresh), "switch_mode": "exact"})
    return SelectionResult(selected, gains, current, "lazy-greedy", "exact", seed, per_step, evaluations)


def exhaustive_select(model: CpdModel, K, cap=DEFAULT_CAP, subset_cap=EXHAUSTIVE_CAP):
    """Best size-``K`` subset by scanning every combination (verification oracle).

    Ties within ``1e-12`` keep the lexicographically first subset.
    """
    K = check_budget(K, model.n_features)
    n_subsets = math.comb(model.n_features, K)
    if n_subsets > subset_cap:
        raise CapacityError(f"{n_subsets} subsets exceed the exhaustive cap {subset_cap}")
    best, best_value = None, -math.inf
    for subset in itertools.combinations(range(model.n_features), K):
        value = mi_subset_latent(model, subset, "exact", cap=cap)
        if value > best_value + TIE_ATOL:
            best, best_value = subset, value
    gains, prev = [], 0.0
    for k in range(1, K + 1):
        v = mi_subset_latent(model, best[:k], "exact", cap=cap) if k < K else best_value
        gains.append(v - prev)
        prev = v
    per_step = [{"candidates_evaluated": n_subsets, "switch_mode": "exact"}]
    return SelectionResult(list(best), gains, best_value, "exhaustive", "exact", None, per_step, n_subsets)


def remodeling_select(
    codes,
    labels,
    K,
    rank,
    cardinalities=None,
    fit_config=None,
    entropy_mode="auto",
    T=5000,
    seed=None,
    cap=DEFAULT_CAP,
):
    """Greedy selection that refits a CPD for every candidate subset.

    At each step and for each remaining feature ``s``, a rank-``rank`` model
    of ``(X_{S+s}, Y)`` is fitted to the empirical PMF of those columns and
    ``I(X_{S+s}; Z)`` is computed under it. Gains are differences between
    values of different models and may be slightly negative.

    ``fit_config`` supplies ``max_iterations`` and the tolerance; its rank and
    seed are replaced per candidate.
    """
    X = check_codes(codes, cardinalities)
    y = check_labels(labels, X.shape[0])
    K = check_budget(K, X.shape[1])
    if cardinalities is None:
        cardinalities = infer_cardinalities(X)
    classes, y_codes = np.unique(y, return_inverse=True)
    max_iter = fit_config.max_iterations if fit_config else 500
    tol = fit_config.relative_kl_tolerance if fit_config else 1e-6

    selected, gains, per_step = [], [], []
    current = 0.0
    evaluations = 0
    for step in range(K):
        values, modes = {}, set()
        for s in range(X.shape[1]):
            if s in selected:
                continue
            cols = selected + [s]
            dims = tuple(cardinalities[j] for j in cols) + (len(classes),)
            try:
                empirical = build_empirical_pmf(np.column_stack([X[:, cols], y_codes]), dims)
                config = FitConfig(rank, max_iter, tol, derive_seed(seed, step, s))
                sub_model, _ = em_fit(empirical, config)
                mode = entropy_mode
                if mode == "auto":
                    mode = "exact" if math.prod(dims[:-1]) <= cap else "mc"
                values[s] = mi_subset_latent(
                    sub_model, range(len(cols)), mode, T, derive_seed(seed, 7), cap
                )
                modes.add(mode)
            except CpdSelectError as exc:
                logger.warning("skipping candidate %d at step %d: %s", s, step, exc)
        if not values:
            raise SelectionError(f"every candidate failed at step {step}")
        evaluations += len(values)
        chosen = _argmax_smallest(values, modes == {"exact"})
        gain = values[chosen] - current
        current = values[chosen]
        selected.append(chosen)
        gains.append(gain)
        step_mode = modes.pop() if len(modes) == 1 else "auto"
        per_step.append({"candidates_evaluated": len(values), "switch_mode": step_mode})
    return SelectionResult(
        selected, gains, current, "remodeling", _mode_label(per_step), seed, per_step, evaluations
    )


STRATEGIES = {"greedy": greedy_select, "lazy": lazy_greedy_select}


class CPDFeatureSelector(SelectorMixin, BaseEstimator):
    """Select ``K`` discrete features by their information about the CPD latent state.

    A rank-``F`` CPD is fitted to the joint PMF of the features and the label,
    and features are then chosen greedily to maximize ``I(X_S; Z)``.

    Parameters
    ----------
    n_features_to_select : int, default=5
    rank : int or sequence of int, default=5
        A sequence triggers rank selection by ``cv``-fold cross-validation.
    strategy : {"greedy", "lazy", "remodel"}, default="greedy"
    entropy : {"exact", "mc", "auto"}, default="auto"
    n_samples : int, default=5000
        Monte-Carlo sample count ``T``.
    max_iter : int, default=500
    tol : float, default=1e-6
    cv : int, default=5
    cardinalities : sequence of int, optional
    random_state : int or None

    Attributes
    ----------
    model_ : CpdModel
        Model of ``(X, y)`` with the label as the last factor.
    fit_report_ : FitReport
    rank_ : int
    cv_results_ : dict or None
    selection_ : SelectionResult
    """

    def __init__(
        self,
        n_features_to_select=5,
        rank=5,
        strategy="greedy",
        entropy="auto",
        n_samples=5000,
        max_iter=500,
        tol=1e-6,
        cv=5,
        cardinalities=None,
        random_state=None,
    ):
        self.n_features_to_select = n_features_to_select
        self.rank = rank
        self.strategy = strategy
        self.entropy = entropy
        self.n_samples = n_samples
        self.max_iter = max_iter
        self.tol = tol
        self.cv = cv
        self.cardinalities = cardinalities
        self.random_state = random_state

    def fit(self, X, y):
        if self.strategy not in ("greedy", "lazy", "remodel"):
            raise ArgumentError(f"unknown strategy {self.strategy!r}")
        X = check_codes(X, self.cardinalities)
        y = check_labels(y, X.shape[0])
        K = check_budget(self.n_features_to_select, X.shape[1])
        cards = (
            tuple(int(c) for c in self.cardinalities)
            if self.cardinalities is not None
            else infer_cardinalities(X)
        )
        self.cardinalities_ = cards
        self.n_features_in_ = X.shape[1]
        self.classes_, y_codes = np.unique(y, return_inverse=True)
        rs = self.random_state

        if np.ndim(self.rank) == 0:
            self.rank_, self.cv_results_ = int(self.rank), None
        else:
            self.rank_, self.cv_results_ = cross_validate_rank(
                X, y_codes, self.rank, self.cv, derive_seed(rs, 3), cards, self.max_iter, self.tol
            )
        config = FitConfig(self.rank_, self.max_iter, self.tol, derive_seed(rs, 1))
        empirical = build_empirical_pmf(np.column_stack([X, y_codes]), cards + (len(self.classes_),))
        self.model_, self.fit_report_ = em_fit(empirical, config)

        sel_seed = derive_seed(rs, 2)
        if self.strategy == "remodel":
            self.selection_ = remodeling_select(
                X, y_codes, K, self.rank_, cards, config, self.entropy, self.n_samples, sel_seed
            )
        else:
            self.selection_ = STRATEGIES[self.strategy](
                self.model_, K, self.entropy, self.n_samples, sel_seed
            )
        return self

    @property
    def selected_features_(self):
        check_is_fitted(self, "selection_")
        return list(self.selection_.order)

    def _get_support_mask(self):
        check_is_fitted(self, "selection_")
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.selection_.order] = True
        return mask
