"""Oracle checks on a fitted or synthetic model, run by ``cpdselect verify``."""

from __future__ import annotations

import math

import numpy as np

from .exceptions import CapacityError
from .info_theory import (
    DEFAULT_CAP,
    bandgap_constant,
    joint_entropy_exact,
    joint_entropy_mc,
    mi_subset_latent,
    mi_subset_target,
)
from .selection import exhaustive_select, greedy_select, lazy_greedy_select

MAX_SCAN_FEATURES = 12
STRUCT_ATOL = 1e-10
GUARANTEE = 1.0 - 1.0 / math.e


def subset_values(fn, n_features):
    """``fn(subset)`` for every subset, indexed by bitmask (empty set gives 0)."""
    values = np.zeros(1 << n_features)
    for mask in range(1, 1 << n_features):
        values[mask] = fn([j for j in range(n_features) if mask >> j & 1])
    return values


def monotonicity_violations(values, n_features, atol=STRUCT_ATOL):
    bad = []
    for mask in range(1 << n_features):
        for x in range(n_features):
            if not mask >> x & 1 and values[mask | 1 << x] < values[mask] - atol:
                bad.append((mask, x))
    return bad


def submodularity_violations(values, n_features, atol=STRUCT_ATOL):
    """All ``(A, B, x)`` with ``A <= B``, ``x`` not in ``B`` and increasing returns."""
    bad = []
    for b in range(1 << n_features):
        outside = [x for x in range(n_features) if not b >> x & 1]
        a = b
        while True:
            for x in outside:
                gain_a = values[a | 1 << x] - values[a]
                gain_b = values[b | 1 << x] - values[b]
                if gain_a < gain_b - atol:
                    bad.append((a, b, x))
            if a == 0:
                break
            a = (a - 1) & b
    return bad


def _check(passed, **detail):
    return {"passed": bool(passed), **detail}


def verify_model(model, budget=None, T=5000, seed=0, cap=DEFAULT_CAP):
    """Run the oracle suite and return ``{check_name: {"passed": bool, ...}}``.

    An invariant failure short-circuits the numeric checks, which would be
    meaningless on a model that is not a distribution.
    """
    report = {}
    problems = model.invariant_violations()
    report["invariants"] = _check(not problems, problems=problems)
    if problems:
        return report

    n = model.n_features
    if n > MAX_SCAN_FEATURES:
        raise CapacityError(f"check 'submodularity': {n} features exceed the scan limit {MAX_SCAN_FEATURES}")
    try:
        g = subset_values(lambda s: mi_subset_latent(model, s, "exact", cap=cap), n)
    except CapacityError as exc:
        raise CapacityError(f"check 'submodularity': {exc}") from exc
    mono = monotonicity_violations(g, n)
    sub = submodularity_violations(g, n)
    report["monotonicity"] = _check(not mono, violations=len(mono))
    report["submodularity"] = _check(not sub, violations=len(sub))

    if model.label_index is not None:
        try:
            const = bandgap_constant(model, cap)
            f = subset_values(lambda s: mi_subset_target(model, s, cap), n)
        except CapacityError as exc:
            raise CapacityError(f"check 'bandgap': {exc}") from exc
        lower = np.all(f[1:] >= g[1:] - const - STRUCT_ATOL)
        upper = np.all(f[1:] <= g[1:] + STRUCT_ATOL)
        report["bandgap"] = _check(lower and upper, constant=const)

    k = budget if budget is not None else min(3, n)
    greedy = greedy_select(model, k, "exact", cap=cap)
    best = exhaustive_select(model, k, cap=cap)
    report["greedy_guarantee"] = _check(
        greedy.final_value >= GUARANTEE * best.final_value - 1e-8,
        greedy_value=greedy.final_value,
        optimum=best.final_value,
        optimal=abs(greedy.final_value - best.final_value) <= 1e-10,
    )
    lazy = lazy_greedy_select(model, k, "exact", cap=cap)
    report["lazy_equivalence"] = _check(
        lazy.order == greedy.order and lazy.gains == greedy.gains and lazy.evaluations <= greedy.evaluations,
        greedy_evaluations=greedy.evaluations,
        lazy_evaluations=lazy.evaluations,
    )

    everything = list(range(n))
    try:
        exact = joint_entropy_exact(model, everything, cap).value
    except CapacityError as exc:
        raise CapacityError(f"check 'mc_entropy': {exc}") from exc
    mc = joint_entropy_mc(model, everything, T, seed)
    report["mc_entropy"] = _check(
        abs(mc.value - exact) <= 4 * mc.standard_error + 1e-9,
        exact=exact,
        estimate=mc.value,
        standard_error=mc.standard_error,
    )
    return report


def all_passed(report):
    return all(check["passed"] for check in report.values())
