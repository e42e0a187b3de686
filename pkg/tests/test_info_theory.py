import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdselect.exceptions import CapacityError
from cpdselect.info_theory import (
    bandgap_constant,
    conditional_entropy_given_latent,
    joint_entropy_exact,
    joint_entropy_mc,
    mi_subset_latent,
    mi_subset_target,
)
from cpdselect.pmf_tensor import CpdModel, random_model
from cpdselect.verify import monotonicity_violations, subset_values, submodularity_violations

from oracles import entropy, full_joint, latent_joint_dict, marginal, model_params, mutual_information


def _uniform_model(dims):
    return CpdModel([1.0], [np.full((d, 1), 1 / d) for d in dims])


def _point_mass(dims, at):
    factors = []
    for d, i in zip(dims, at):
        a = np.zeros((d, 1))
        a[i] = 1
        factors.append(a)
    return CpdModel([1.0], factors)


def test_conditional_entropy_one_hot_columns():
    a = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    model = CpdModel([0.2, 0.3, 0.5], [a])
    assert conditional_entropy_given_latent(model, 0) == 0.0


def test_conditional_entropy_uniform_columns():
    model = CpdModel([0.5, 0.5], [np.full((4, 2), 0.25)])
    assert conditional_entropy_given_latent(model, 0) == pytest.approx(math.log(4), abs=1e-15)
    assert conditional_entropy_given_latent(model, 0) == pytest.approx(1.386294, abs=1e-6)


def test_conditional_entropy_double_sum_oracle():
    model = random_model((5, 2), 3, seed=13)
    w, fac = model_params(model)
    expected = -sum(fac[0][i][z] * w[z] * math.log(fac[0][i][z]) for i in range(5) for z in range(3))
    assert conditional_entropy_given_latent(model, 0) == pytest.approx(expected, abs=1e-12)
    assert conditional_entropy_given_latent(model, 0) == pytest.approx(1.3667263858438607, abs=1e-12)


def test_joint_entropy_uniform_grid():
    h = joint_entropy_exact(_uniform_model((3, 3)), [0, 1])
    assert h.value == pytest.approx(math.log(9), abs=1e-12)
    assert h.method == "exact" and h.standard_error is None


def test_joint_entropy_point_mass():
    assert joint_entropy_exact(_point_mass((2, 3, 2), (1, 2, 0)), [0, 1, 2]).value == 0.0


def test_joint_entropy_enumeration_oracle():
    model = random_model((3, 2, 4, 3), 4, seed=14)
    expected = entropy(marginal(full_joint(model), [0, 1, 2]))
    got = joint_entropy_exact(model, [0, 1, 2]).value
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(3.107379958550406, abs=1e-12)


def test_joint_entropy_cap():
    model = random_model((10, 10, 10), 2, seed=0)
    with pytest.raises(CapacityError, match="Monte-Carlo"):
        joint_entropy_exact(model, [0, 1, 2], cap=999)


def test_mc_point_mass_exact_zero():
    h = joint_entropy_mc(_point_mass((2, 3), (0, 2)), [0, 1], T=1000, seed=0)
    assert h.value == 0.0
    assert h.method == "monte-carlo" and h.sample_count == 1000


def test_mc_uniform_within_three_se():
    h = joint_entropy_mc(_uniform_model((3, 3)), [0, 1], T=100_000, seed=1)
    # uniform: every log-probability equals -log 9, so the estimate is exact
    assert abs(h.value - math.log(9)) <= max(3 * h.standard_error, 1e-12)


def test_mc_matches_exact_random():
    model = random_model((3, 3, 3, 3), 4, seed=15)
    exact = joint_entropy_exact(model, [0, 1, 2, 3]).value
    h = joint_entropy_mc(model, [0, 1, 2, 3], T=100_000, seed=2)
    assert abs(h.value - exact) <= 3 * h.standard_error


def test_mc_mean_over_seeds():
    model = random_model((3, 2, 3), 3, seed=16)
    exact = joint_entropy_exact(model, [0, 1, 2]).value
    estimates = [joint_entropy_mc(model, [0, 1, 2], T=5000, seed=s) for s in range(50)]
    mean = np.mean([e.value for e in estimates])
    pooled_se = math.sqrt(sum(e.standard_error**2 for e in estimates)) / len(estimates)
    assert abs(mean - exact) <= 3 * pooled_se


def test_mi_rank_one_is_zero():
    model = random_model((3, 2, 4), 1, seed=3)
    for r in range(1, 4):
        for s in itertools.combinations(range(3), r):
            assert mi_subset_latent(model, s) == pytest.approx(0.0, abs=1e-12)


def test_mi_identity_factor_gives_log_f():
    F = 4
    model = CpdModel(np.full(F, 1 / F), [np.eye(F), np.full((2, F), 0.5)])
    assert mi_subset_latent(model, [0]) == pytest.approx(math.log(F), abs=1e-12)


def test_mi_latent_enumeration_oracle():
    model = random_model((3, 4, 2, 3), 3, seed=15, label_index=3)
    lj = latent_joint_dict(model, [1, 2])
    expected = mutual_information(lj, [0, 1], [2])
    got = mi_subset_latent(model, [1, 2])
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.15865762408811282, abs=1e-12)


def test_mi_latent_mc_mode():
    model = random_model((3, 3, 3), 3, seed=2)
    exact = mi_subset_latent(model, [0, 1, 2])
    approx = mi_subset_latent(model, [0, 1, 2], mode="mc", T=100_000, seed=4)
    assert abs(exact - approx) < 0.02


def test_mi_target_independent_label():
    model = random_model((3, 2, 2), 3, seed=5, label_index=2)
    same = np.tile([[0.4], [0.6]], (1, 3))
    model = CpdModel(model.weights, [model.factors[0], model.factors[1], same], label_index=2)
    assert mi_subset_target(model, [0, 1]) == pytest.approx(0.0, abs=1e-12)


def test_mi_target_deterministic_chain_equals_label_entropy():
    w = np.array([0.2, 0.3, 0.5])
    model = CpdModel(w, [np.eye(3), np.full((2, 3), 0.5), np.eye(3)], label_index=2)
    h_y = -np.sum(w * np.log(w))
    assert mi_subset_target(model, [0]) == pytest.approx(h_y, abs=1e-12)


def test_mi_target_enumeration_oracle():
    model = random_model((3, 4, 2, 3), 3, seed=15, label_index=3)
    expected = mutual_information(full_joint(model), [1, 2], [3])
    got = mi_subset_target(model, [1, 2])
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.008814772731919312, abs=1e-12)


def test_bandgap_rank_one_zero():
    assert bandgap_constant(random_model((3, 3, 2), 1, seed=1, label_index=2)) == pytest.approx(0, abs=1e-12)


def test_bandgap_zero_when_label_identifies_latent():
    model = random_model((3, 2, 3), 3, seed=2, label_index=2)
    model = CpdModel(model.weights, [model.factors[0], model.factors[1], np.eye(3)], label_index=2)
    assert bandgap_constant(model) == pytest.approx(0.0, abs=1e-12)


def test_bandgap_enumeration_oracle():
    model = random_model((3, 3, 3, 3, 2), 3, seed=16, label_index=4)
    lj = latent_joint_dict(model, [0, 1, 2, 3, 4])
    expected = mutual_information(lj, [0, 1, 2, 3], [4, 5]) - mutual_information(lj, [0, 1, 2, 3], [4])
    got = bandgap_constant(model)
    assert got == pytest.approx(expected, abs=1e-12)
    assert got == pytest.approx(0.34542152387749925, abs=1e-12)


def test_chain_consistency():
    model = random_model((2, 3, 3, 2), 3, seed=7)
    for r in range(1, 5):
        for s in itertools.combinations(range(4), r):
            h = entropy(marginal(full_joint(model), list(s)))
            decomposed = mi_subset_latent(model, s) + sum(conditional_entropy_given_latent(model, j) for j in s)
            assert h == pytest.approx(decomposed, abs=1e-10)


def test_khatri_rao_form_equals_decomposition():
    model = random_model((3, 2, 4), 3, seed=8)
    w = model.weights
    kr = model.factors[0]
    for a in model.factors[1:]:
        kr = (kr[:, None, :] * a[None, :, :]).reshape(-1, model.rank)
    joint = kr * w
    marg = kr @ w
    direct = np.sum(joint * np.log(joint / (marg[:, None] * w[None, :])))
    assert mi_subset_latent(model, [0, 1, 2]) == pytest.approx(direct, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 5), rank=st.integers(1, 4))
def test_g_monotone_submodular_property(seed, n, rank):
    model = random_model((3,) * n, rank, seed=seed)
    g = subset_values(lambda s: mi_subset_latent(model, s), n)
    assert monotonicity_violations(g, n) == []
    assert submodularity_violations(g, n) == []


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rank=st.integers(1, 4))
def test_claim_band_property(seed, rank):
    model = random_model((3, 2, 3, 2), rank, seed=seed, label_index=3)
    const = bandgap_constant(model)
    for r in range(1, 4):
        for s in itertools.combinations(range(3), r):
            g = mi_subset_latent(model, s)
            f = mi_subset_target(model, s)
            assert g - const - 1e-10 <= f <= g + 1e-10
