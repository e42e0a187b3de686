"""Brute-force reference computations.

Everything here uses plain loops over explicit index grids and dictionaries,
sharing no code path with the package beyond reading model parameters.
"""

import itertools
import math
from collections import Counter


def naive_eval(weights, factors, tup):
    total = 0.0
    for f in range(len(weights)):
        term = weights[f]
        for n, i in enumerate(tup):
            term *= factors[n][i][f]
        total += term
    return total


def model_params(model):
    return [float(w) for w in model.weights], [a.tolist() for a in model.factors]


def full_joint(model):
    """{tuple: prob} over every variable of the model (label included)."""
    w, fac = model_params(model)
    grids = [range(len(a)) for a in fac]
    return {t: naive_eval(w, fac, t) for t in itertools.product(*grids)}


def latent_joint_dict(model, variables):
    """{(x_vars..., z): prob} by enumeration."""
    w, fac = model_params(model)
    out = {}
    for xs in itertools.product(*[range(len(fac[v])) for v in variables]):
        for z in range(len(w)):
            p = w[z]
            for v, x in zip(variables, xs):
                p *= fac[v][x][z]
            out[xs + (z,)] = p
    return out


def marginal(joint, keep):
    out = Counter()
    for t, p in joint.items():
        out[tuple(t[k] for k in keep)] += p
    return dict(out)


def entropy(dist):
    return -sum(p * math.log(p) for p in dist.values() if p > 0)


def mutual_information(joint, a, b):
    """I(A;B) = sum p log p/(p_a p_b) for position lists a, b of ``joint``'s keys."""
    pa = marginal(joint, a)
    pb = marginal(joint, b)
    pab = marginal(joint, a + b)
    total = 0.0
    for t, p in pab.items():
        if p > 0:
            total += p * math.log(p / (pa[t[: len(a)]] * pb[t[len(a) :]]))
    return total


def counting_histogram(rows):
    counts = Counter(tuple(int(v) for v in r) for r in rows)
    m = len(rows)
    return {t: c / m for t, c in counts.items()}


def kl_oracle(emp_entries, model):
    w, fac = model_params(model)
    return sum(p * math.log(p / naive_eval(w, fac, t)) for t, p in emp_entries.items())


def posterior_oracle(model, observed):
    """P(Y | observed) with ``observed`` a {feature_var: code} dict; label is the last variable."""
    joint = full_joint(model)
    label = model.n_vars - 1
    scores = [0.0] * model.dims[label]
    for t, p in joint.items():
        if all(t[v] == c for v, c in observed.items()):
            scores[t[label]] += p
    s = sum(scores)
    return [x / s for x in scores]


def knn_oracle(train, train_labels, test, subset):
    preds = []
    for row in test:
        best, best_d = None, None
        for i, tr in enumerate(train):
            d = sum(1 for j in subset if row[j] != tr[j])
            if best_d is None or d < best_d:
                best, best_d = i, d
        preds.append(train_labels[best])
    return preds


def equal_width_oracle(values, lo, hi, bins):
    width = (hi - lo) / bins
    out = []
    for x in values:
        if width == 0:
            out.append(0)
            continue
        k = 0
        while k < bins - 1 and x >= lo + (k + 1) * width:
            k += 1
        out.append(k)
    return out
