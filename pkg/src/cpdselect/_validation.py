"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import ArgumentError, IndexBoundsError


def check_codes(X, cardinalities=None, allow_missing=False):
    """Return ``X`` as a 2-D int64 matrix of discrete codes.

    Negative entries mark missing values and are only accepted with
    ``allow_missing``. When ``cardinalities`` is given every observed code must
    lie below its column's cardinality.
    """
    X = check_array(X, dtype=None, ensure_all_finite=True)
    if not np.issubdtype(X.dtype, np.integer):
        if not np.issubdtype(X.dtype, np.number) or np.any(np.mod(X, 1) != 0):
            raise ArgumentError("feature codes must be integers")
    X = X.astype(np.int64)
    if not allow_missing and np.any(X < 0):
        row, col = np.argwhere(X < 0)[0]
        raise IndexBoundsError(
            f"negative code at row {row}, feature {col}", variable=int(col), row=int(row)
        )
    if cardinalities is not None:
        cards = np.asarray(cardinalities, dtype=np.int64)
        if cards.shape != (X.shape[1],):
            raise ArgumentError(f"expected {X.shape[1]} cardinalities, got {cards.shape}")
        over = np.argwhere(X >= cards[None, :])
        if over.size:
            row, col = over[0]
            raise IndexBoundsError(
                f"code {X[row, col]} of feature {col} at row {row} exceeds cardinality {cards[col]}",
                variable=int(col),
                row=int(row),
            )
    return X


def infer_cardinalities(X):
    return tuple(int(c) for c in np.max(X, axis=0) + 1)


def check_labels(y, n_rows=None):
    y = np.asarray(y).ravel()
    if n_rows is not None:
        check_consistent_length(np.empty(n_rows), y)
    return y


def check_budget(k, n_features):
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise ArgumentError(f"budget must be an integer, got {k!r}")
    if not 1 <= k <= n_features:
        raise ArgumentError(f"budget {k} outside [1, {n_features}]")
    return int(k)
