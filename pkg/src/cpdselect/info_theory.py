"""Entropy and mutual information of CPD models, exact and Monte-Carlo.

The mutual information between a feature subset and the latent variable uses
the naive Bayes decomposition

    I(X_S; Z) = H(X_S) - sum_{n in S} H(X_n | Z)

where each conditional entropy is a closed-form double sum over one factor
and ``H(X_S)`` is either enumerated over the subset's grid or estimated from
ancestral samples. All values are in nats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .exceptions import ArgumentError, CapacityError
from .pmf_tensor import (
    CpdModel,
    draw_latent,
    draw_variable,
    feature_variables,
    latent_joint,
)

logger = logging.getLogger(__name__)

DEFAULT_CAP = 10**6
NEGATIVE_MI_ATOL = 1e-10
PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    method: str
    sample_count: int | None = None
    standard_error: float | None = None

    def __float__(self):
        return float(self.value)


def _grid_size(model, variables):
    return int(np.prod([model.dims[v] for v in variables], dtype=float))


def entropy_of(p):
    """``-sum p log p`` with ``0 log 0 = 0``."""
    return float(-np.sum(xlogy(p, p)))


def conditional_entropy_given_latent(model: CpdModel, n) -> float:
    """``H(X_n | Z) = -sum_{i,f} A_n[i,f] w[f] log A_n[i,f]`` for feature ``n``."""
    (var,) = feature_variables(model, [n])
    a = model.factors[var]
    return float(-np.sum(xlogy(a, a) @ model.weights))


def _variable_conditional_entropy(model, var):
    a = model.factors[var]
    return float(-np.sum(xlogy(a, a) @ model.weights))


def _enumerated_entropy(model, variables, cap):
    size = _grid_size(model, variables)
    if size > cap:
        raise CapacityError(
            f"exact entropy over {size} cells exceeds cap {cap}; use Monte-Carlo estimation"
        )
    head, last = variables[:-1], variables[-1]
    p = latent_joint(model, head) @ model.factors[last].T
    return entropy_of(p)


def joint_entropy_exact(model: CpdModel, subset, cap=DEFAULT_CAP) -> EntropyEstimate:
    """``H(X_S)`` by enumerating the subset's full grid."""
    variables = feature_variables(model, subset)
    if not variables:
        return EntropyEstimate(0.0, "exact")
    return EntropyEstimate(_enumerated_entropy(model, variables, cap), "exact")


def _log_prob_samples(model, variables, samples):
    prod = np.ones((samples.shape[0], model.rank))
    for col, v in enumerate(variables):
        prod *= model.factors[v][samples[:, col]]
    p = prod @ model.weights
    low = p < PROB_FLOOR
    if np.any(low):
        logger.warning("clamped %d sampled probabilities to %g", int(low.sum()), PROB_FLOOR)
        p = np.where(low, PROB_FLOOR, p)
    return np.log(p)


def _mc_from_logs(logp, count):
    value = -float(np.mean(logp))
    se = float(np.std(logp, ddof=1) / np.sqrt(count)) if count > 1 else float("inf")
    return EntropyEstimate(value, "monte-carlo", count, se)


def joint_entropy_mc(model: CpdModel, subset, T=5000, seed=None) -> EntropyEstimate:
    """Monte-Carlo ``H(X_S) = -E[log P(X_S)]`` from ``T`` ancestral samples."""
    T = int(T)
    if T < 1:
        raise ArgumentError("T must be >= 1")
    variables = feature_variables(model, subset)
    if not variables:
        return EntropyEstimate(0.0, "monte-carlo", T, 0.0)
    z = draw_latent(model, T, seed)
    samples = np.column_stack([draw_variable(model, v, z, seed) for v in variables])
    return _mc_from_logs(_log_prob_samples(model, variables, samples), T)


def joint_entropy(model, subset, mode="exact", T=5000, seed=None, cap=DEFAULT_CAP):
    """Dispatch on ``mode`` in ``{"exact", "mc", "auto"}``."""
    if mode == "auto":
        variables = feature_variables(model, subset)
        mode = "exact" if _grid_size(model, variables) <= cap else "mc"
    if mode == "exact":
        return joint_entropy_exact(model, subset, cap)
    if mode == "mc":
        return joint_entropy_mc(model, subset, T, seed)
    raise ArgumentError(f"unknown entropy mode {mode!r}")


def _clamp_mi(value, exact):
    if exact:
        if value < -NEGATIVE_MI_ATOL:
            raise ArithmeticError(f"exact mutual information {value!r} is negative")
        return max(value, 0.0)
    return value


def mi_subset_latent(model: CpdModel, subset, mode="exact", T=5000, seed=None, cap=DEFAULT_CAP):
    """``I(X_S; Z)`` via ``H(X_S) - sum_n H(X_n | Z)``."""
    subset = list(subset)
    if not subset:
        raise ArgumentError("subset must be nonempty")
    h = joint_entropy(model, subset, mode, T, seed, cap)
    cond = sum(conditional_entropy_given_latent(model, j) for j in subset)
    return _clamp_mi(h.value - cond, h.method == "exact")


def _require_label(model):
    if model.label_index is None:
        raise ArgumentError("model has no label factor")


def mi_subset_target(model: CpdModel, subset, cap=DEFAULT_CAP) -> float:
    """Exact ``I(X_S; Y) = H(X_S) + H(Y) - H(X_S, Y)`` by enumeration."""
    _require_label(model)
    variables = feature_variables(model, subset)
    if not variables:
        return 0.0
    label = model.label_index
    h_s = _enumerated_entropy(model, variables, cap)
    h_y = entropy_of(model.label_factor @ model.weights)
    h_sy = _enumerated_entropy(model, variables + [label], cap)
    return _clamp_mi(h_s + h_y - h_sy, True)


def bandgap_constant(model: CpdModel, cap=DEFAULT_CAP) -> float:
    """Exact ``I(X_V; Z | Y)`` over the full feature set.

    Features are independent of the label given the latent state, so
    ``H(X_V | Z, Y) = sum_n H(X_n | Z)`` and the constant reduces to
    ``H(X_V, Y) - H(Y) - sum_n H(X_n | Z)``.
    """
    _require_label(model)
    variables = list(model.feature_vars)
    h_vy = _enumerated_entropy(model, variables + [model.label_index], cap)
    h_y = entropy_of(model.label_factor @ model.weights)
    cond = sum(_variable_conditional_entropy(model, v) for v in variables)
    return _clamp_mi(h_vy - h_y - cond, True)
