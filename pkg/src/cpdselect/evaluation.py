"""1-nearest-neighbor scoring of selected feature subsets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ArgumentError

# bound on test_chunk * n_train * |subset| comparisons held in memory at once
_CHUNK_CELLS = 2**24


def knn_classify(train_codes, train_labels, test_codes, subset, metric="hamming"):
    """Label of the nearest training row for each test row.

    Distance is Hamming over the subset's codes (or Manhattan over bin
    indices with ``metric="manhattan"``). Equal distances resolve to the
    smallest training row index.
    """
    subset = [int(j) for j in subset]
    if not subset:
        raise ArgumentError("subset must be nonempty")
    if metric not in ("hamming", "manhattan"):
        raise ArgumentError(f"unknown metric {metric!r}")
    train = np.asarray(train_codes)[:, subset]
    test = np.asarray(test_codes)[:, subset]
    train_labels = np.asarray(train_labels)
    if train.shape[0] == 0:
        raise ArgumentError("training set is empty")
    if train_labels.shape[0] != train.shape[0]:
        raise ArgumentError("train codes and labels disagree in length")
    chunk = max(1, _CHUNK_CELLS // (train.shape[0] * len(subset)))
    nearest = np.empty(test.shape[0], dtype=np.int64)
    for start in range(0, test.shape[0], chunk):
        block = test[start : start + chunk, None, :]
        if metric == "hamming":
            dist = np.count_nonzero(block != train[None, :, :], axis=2)
        else:
            dist = np.abs(block.astype(np.int64) - train[None, :, :]).sum(axis=2)
        # argmin returns the first minimum, i.e. the smallest training index
        nearest[start : start + chunk] = np.argmin(dist, axis=1)
    return train_labels[nearest]


def accuracy(predicted, actual) -> float:
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape or predicted.ndim != 1:
        raise ArgumentError(f"length mismatch: {predicted.shape} vs {actual.shape}")
    if predicted.shape[0] < 1:
        raise ArgumentError("need at least one prediction")
    return float(np.mean(predicted == actual))


@dataclass
class AccuracyCurve:
    """Mean accuracy (and spread) per subset size, with a random-subset control."""

    points: list = field(default_factory=list)
    control: list = field(default_factory=list)

    def __post_init__(self):
        ks = [p[0] for p in self.points]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise ArgumentError("K values must be strictly increasing")
        for _, acc, _ in self.points:
            if not 0.0 <= acc <= 1.0:
                raise ArgumentError(f"accuracy {acc} outside [0, 1]")

    def to_tsv(self):
        lines = ["K\tmean_acc\tstd\tcontrol_acc"]
        for (k, acc, std), ctrl in zip(self.points, self.control):
            lines.append(f"{k}\t{acc!r}\t{std!r}\t{ctrl!r}")
        return "\n".join(lines) + "\n"
