"""Sparse empirical PMF tensors and the simplex-constrained CPD model.

A joint PMF over ``N`` discrete features and one label is stored two ways:

* :class:`SparseCountTensor` keeps the empirical distribution as the list of
  observed index tuples and their relative frequencies. Tuples are sorted
  lexicographically so every traversal happens in a fixed order.
* :class:`CpdModel` is the low-rank naive Bayes form
  ``P(i_1, ..., i_{N+1}) = sum_f w[f] * prod_n A_n[i_n, f]`` with ``w`` on the
  probability simplex and every factor column-stochastic.

Probabilities are natural-unit floats and all logarithms are natural.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .exceptions import ArgumentError, CapacityError, IndexBoundsError, InvariantError

SIMPLEX_ATOL = 1e-12


def rng_stream(seed, *key):
    """Independent generator for ``(seed, *key)``.

    The same pair always yields the same stream, and distinct keys yield
    statistically independent streams. This is how every subsystem derives its
    randomness from a single user seed.
    """
    key = tuple(int(k) for k in key)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def derive_seed(seed, *key):
    """Integer seed for a labelled sub-task; ``None`` stays ``None``."""
    if seed is None:
        return None
    key = tuple(int(k) for k in key)
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def _lexsort_rows(indices):
    if indices.shape[0] == 0:
        return np.arange(0)
    return np.lexsort(indices.T[::-1])


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseCountTensor:
    """Empirical joint PMF as a normalized sparse tensor.

    Parameters
    ----------
    dims : tuple of int
        Cardinality of each variable.
    indices : ndarray of shape (nnz, n_vars)
        Observed index tuples, sorted lexicographically.
    values : ndarray of shape (nnz,)
        Probability mass of each stored tuple, strictly positive.
    total_samples : int
        Number of samples the frequencies came from.
    """

    dims: tuple
    indices: np.ndarray
    values: np.ndarray
    total_samples: int

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        indices = np.array(self.indices, dtype=np.int64, copy=True).reshape(-1, len(dims))
        values = np.array(self.values, dtype=float, copy=True).ravel()
        if any(d < 1 for d in dims):
            raise ArgumentError(f"cardinalities must be >= 1, got {dims}")
        if indices.shape[0] != values.shape[0]:
            raise ArgumentError("indices and values disagree in length")
        if indices.shape[0] == 0:
            raise ArgumentError("empirical PMF needs at least one entry")
        _check_bounds(indices, dims)
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise ArgumentError("stored masses must be finite and strictly positive")
        if abs(values.sum() - 1.0) > SIMPLEX_ATOL:
            raise ArgumentError(f"masses sum to {values.sum()!r}, expected 1")
        if indices.shape[0] > self.total_samples:
            raise ArgumentError("more stored entries than samples")
        order = _lexsort_rows(indices)
        indices, values = indices[order], values[order]
        if np.any(np.all(indices[1:] == indices[:-1], axis=1)):
            raise ArgumentError("duplicate index tuples")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", _readonly(indices))
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "total_samples", int(self.total_samples))

    @classmethod
    def from_entries(cls, dims, entries: Mapping[tuple, float], total_samples=None):
        keys = list(entries)
        indices = np.array(keys, dtype=np.int64).reshape(len(keys), len(dims))
        values = np.array([entries[k] for k in keys], dtype=float)
        if total_samples is None:
            total_samples = len(keys)
        return cls(tuple(dims), indices, values, total_samples)

    @classmethod
    def from_dense(cls, array, total_samples=None):
        """Sparse view of a dense probability array (zeros dropped)."""
        array = np.asarray(array, dtype=float)
        nz = np.argwhere(array > 0)
        values = array[tuple(nz.T)]
        values = values / values.sum()
        return cls(array.shape, nz, values, total_samples or len(values))

    @property
    def n_vars(self):
        return len(self.dims)

    @property
    def nnz(self):
        return self.values.shape[0]

    def __len__(self):
        return self.nnz

    def entries(self):
        """Ordered mapping from index tuple to mass."""
        return {tuple(int(i) for i in row): float(v) for row, v in zip(self.indices, self.values)}

    def marginal(self, var):
        return np.bincount(self.indices[:, var], weights=self.values, minlength=self.dims[var])

    def todense(self):
        out = np.zeros(self.dims)
        out[tuple(self.indices.T)] = self.values
        return out


def _check_bounds(codes, dims):
    for n, d in enumerate(dims):
        col = codes[:, n]
        bad = np.flatnonzero((col < 0) | (col >= d))
        if bad.size:
            row = int(bad[0])
            raise IndexBoundsError(
                f"code {int(col[row])} of variable {n} at row {row} is outside [0, {d})",
                variable=n,
                row=row,
            )


def build_empirical_pmf(codes, dims) -> SparseCountTensor:
    """Relative frequency of every distinct row of ``codes``.

    ``codes`` is an ``(M, n_vars)`` integer matrix (features followed by the
    label, in the same order as ``dims``).
    """
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[0] < 1:
        raise ArgumentError("need a 2-D code matrix with at least one row")
    if codes.shape[1] != len(dims):
        raise ArgumentError(f"code matrix has {codes.shape[1]} columns, dims has {len(dims)}")
    if not np.issubdtype(codes.dtype, np.integer):
        if not np.all(np.equal(np.mod(codes, 1), 0)):
            raise ArgumentError("codes must be integers")
        codes = codes.astype(np.int64)
    _check_bounds(codes, tuple(dims))
    uniq, counts = np.unique(codes.astype(np.int64), axis=0, return_counts=True)
    m = codes.shape[0]
    return SparseCountTensor(tuple(dims), uniq, counts / m, m)


class CpdModel:
    """Rank-``F`` nonnegative CPD of a joint PMF (latent class model).

    Parameters
    ----------
    weights : array-like of shape (F,)
        Prior of the latent variable, ``P(Z = f)``.
    factors : sequence of arrays, factor ``n`` of shape (I_n, F)
        Column ``f`` of factor ``n`` is ``P(X_n | Z = f)``.
    label_index : int or None
        Position of the label factor; ``None`` for a features-only model.
    check : bool, default=True
        Validate the simplex constraints on construction.
    """

    def __init__(self, weights, factors: Sequence, label_index=None, *, check=True):
        weights = np.array(weights, dtype=float, copy=True).ravel()
        factors = tuple(np.array(a, dtype=float, copy=True) for a in factors)
        if not factors:
            raise ArgumentError("a model needs at least one factor")
        for n, a in enumerate(factors):
            if a.ndim != 2 or a.shape[1] != weights.shape[0]:
                raise ArgumentError(
                    f"factor {n} has shape {a.shape}, expected (I_{n}, {weights.shape[0]})"
                )
        if label_index is not None:
            label_index = int(label_index)
            if not 0 <= label_index < len(factors):
                raise ArgumentError(f"label_index {label_index} out of range")
        self.weights = _readonly(weights)
        self.factors = tuple(_readonly(a) for a in factors)
        self.label_index = label_index
        if check:
            problems = self.invariant_violations()
            if problems:
                raise InvariantError("; ".join(problems))

    def __repr__(self):
        return f"CpdModel(rank={self.rank}, dims={self.dims}, label_index={self.label_index})"

    @property
    def rank(self):
        return self.weights.shape[0]

    @property
    def dims(self):
        return tuple(a.shape[0] for a in self.factors)

    @property
    def n_vars(self):
        return len(self.factors)

    @property
    def feature_vars(self):
        """Variable positions of the features, in feature order."""
        return tuple(n for n in range(self.n_vars) if n != self.label_index)

    @property
    def n_features(self):
        return len(self.feature_vars)

    @property
    def label_factor(self):
        if self.label_index is None:
            raise ArgumentError("model has no label factor")
        return self.factors[self.label_index]

    def feature_factor(self, j):
        return self.factors[self.feature_vars[j]]

    def invariant_violations(self, atol=SIMPLEX_ATOL):
        """Human-readable list of violated simplex constraints (empty if none)."""
        problems = []
        if not np.all(np.isfinite(self.weights)):
            problems.append("weights contain non-finite values")
        elif np.any(self.weights < 0):
            problems.append("weights have negative entries")
        elif abs(self.weights.sum() - 1.0) > atol:
            problems.append(f"weights sum to {self.weights.sum()!r}")
        for n, a in enumerate(self.factors):
            if not np.all(np.isfinite(a)):
                problems.append(f"factor {n} contains non-finite values")
                continue
            if np.any(a < 0):
                problems.append(f"factor {n} has negative entries")
            err = np.max(np.abs(a.sum(axis=0) - 1.0))
            if err > atol:
                problems.append(f"factor {n} columns deviate from 1 by {err:.3g}")
        return problems

    def to_dict(self, seed=None, fit_report=None):
        d = {
            "rank": self.rank,
            "lambda": self.weights.tolist(),
            "factors": [a.tolist() for a in self.factors],
            "dims": list(self.dims),
            "label_index": self.label_index,
            "seed": seed,
            "fit_report": None if fit_report is None else fit_report.to_dict(),
        }
        return d

    def to_json(self, seed=None, fit_report=None):
        return json.dumps(self.to_dict(seed=seed, fit_report=fit_report), indent=2)

    @classmethod
    def from_dict(cls, d, check=True):
        factors = [np.array(a, dtype=float).reshape(len(a), -1) for a in d["factors"]]
        model = cls(d["lambda"], factors, d.get("label_index"), check=check)
        if "dims" in d and list(d["dims"]) != list(model.dims):
            raise ArgumentError(f"dims {d['dims']} disagree with factor shapes {model.dims}")
        if "rank" in d and int(d["rank"]) != model.rank:
            raise ArgumentError(f"rank {d['rank']} disagrees with lambda length {model.rank}")
        return model

    @classmethod
    def from_json(cls, text, check=True):
        return cls.from_dict(json.loads(text), check=check)


def random_model(dims, rank, seed=None, label_index=None):
    """Model with every simplex vector drawn uniform i.i.d. and normalized."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights = rng.uniform(size=rank)
    factors = [rng.uniform(size=(d, rank)) for d in dims]
    return CpdModel(weights / weights.sum(), [a / a.sum(axis=0) for a in factors], label_index)


def evaluate(model: CpdModel, indices, variables=None):
    """Model probability of each row of ``indices``.

    ``variables`` lists the variable positions the columns refer to (all of
    them by default). Omitted variables are summed out, which for a CPD means
    simply skipping their factors.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim == 1:
        indices = indices[None, :]
    if variables is None:
        variables = range(model.n_vars)
    variables = list(variables)
    if indices.shape[1] != len(variables):
        raise ArgumentError(f"index rows have {indices.shape[1]} entries, expected {len(variables)}")
    _check_bounds(indices, [model.dims[v] for v in variables])
    prod = np.ones((indices.shape[0], model.rank))
    for col, v in enumerate(variables):
        prod *= model.factors[v][indices[:, col]]
    return prod @ model.weights


def model_eval(model: CpdModel, index_tuple) -> float:
    """``sum_f w[f] prod_n A_n[i_n, f]`` for one full index tuple."""
    index_tuple = tuple(index_tuple)
    if len(index_tuple) != model.n_vars:
        raise ArgumentError(f"tuple has {len(index_tuple)} entries, model has {model.n_vars} factors")
    return float(evaluate(model, [index_tuple])[0])


def _check_features(model, subset):
    subset = [int(j) for j in subset]
    if len(set(subset)) != len(subset):
        raise ArgumentError(f"feature subset {subset} has repeated entries")
    for j in subset:
        if not 0 <= j < model.n_features:
            raise ArgumentError(f"feature {j} outside [0, {model.n_features})")
    return subset


def feature_variables(model, subset):
    """Variable positions for feature indices ``subset``."""
    subset = _check_features(model, subset)
    fv = model.feature_vars
    return [fv[j] for j in subset]


def marginalize(model: CpdModel, keep, include_label=True) -> CpdModel:
    """Model over the features ``keep`` (and the label, if requested).

    Column-stochastic factors sum to one over their rows, so summing a
    variable out of the joint just drops its factor; the weights are shared.
    """
    keep = _check_features(model, keep)
    if not keep:
        raise ArgumentError("keep must name at least one feature")
    variables = feature_variables(model, keep)
    label_index = None
    if include_label and model.label_index is not None:
        variables = variables + [model.label_index]
        label_index = len(variables) - 1
    return CpdModel(model.weights, [model.factors[v] for v in variables], label_index, check=False)


def draw_latent(model, count, seed):
    """Latent states ``z ~ w`` from the stream reserved for the latent variable."""
    cdf = np.cumsum(model.weights)
    cdf /= cdf[-1]
    u = rng_stream(seed, 0).random(count)
    return np.searchsorted(cdf, u, side="right")


def draw_variable(model, var, z, seed):
    """Draw variable ``var`` given latent states ``z``.

    Each variable has its own stream keyed by its position, so two subsets
    sharing a variable draw identical values for it from the same seed.
    """
    cdf = np.cumsum(model.factors[var], axis=0)
    cdf /= cdf[-1]
    u = rng_stream(seed, 1, var).random(z.shape[0])
    return np.sum(u[:, None] >= cdf.T[z], axis=1)


def sample_from_model(model: CpdModel, subset, count, seed=None, include_label=False):
    """Ancestral samples ``(count, len(subset))`` of the chosen features.

    Each row draws ``f ~ w`` and then every kept variable from column ``f`` of
    its factor. Deterministic for a fixed integer seed.
    """
    count = int(count)
    if count < 1:
        raise ArgumentError("sample count must be >= 1")
    variables = feature_variables(model, subset)
    if include_label:
        variables.append(model.label_index)
    z = draw_latent(model, count, seed)
    out = np.empty((count, len(variables)), dtype=np.int64)
    for col, v in enumerate(variables):
        out[:, col] = draw_variable(model, v, z, seed)
    return out


def latent_joint(model: CpdModel, variables, cap=None):
    """Dense ``P(x_vars, z)`` as a ``(prod I_v, F)`` matrix (C-order over ``vars``)."""
    size = int(np.prod([model.dims[v] for v in variables], dtype=float))
    if cap is not None and size > cap:
        raise CapacityError(f"grid of {size} cells exceeds cap {cap}")
    w = model.weights[None, :]
    for v in variables:
        a = model.factors[v]
        w = (w[:, None, :] * a[None, :, :]).reshape(-1, model.rank)
    return w


def dense_joint(model: CpdModel, variables=None, cap=None):
    """Dense joint PMF over ``variables`` (all by default), shaped by their dims."""
    if variables is None:
        variables = list(range(model.n_vars))
    variables = list(variables)
    if not variables:
        return np.array(1.0)
    head, last = variables[:-1], variables[-1]
    size = int(np.prod([model.dims[v] for v in variables], dtype=float))
    if cap is not None and size > cap:
        raise CapacityError(f"grid of {size} cells exceeds cap {cap}")
    p = latent_joint(model, head) @ model.factors[last].T
    return p.reshape([model.dims[v] for v in variables])
