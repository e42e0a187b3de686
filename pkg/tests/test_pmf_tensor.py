import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdselect.exceptions import ArgumentError, IndexBoundsError, InvariantError
from cpdselect.pmf_tensor import (
    CpdModel,
    SparseCountTensor,
    build_empirical_pmf,
    dense_joint,
    marginalize,
    model_eval,
    random_model,
    sample_from_model,
)

from oracles import counting_histogram, full_joint, marginal, model_params, naive_eval


def test_identical_rows_give_single_entry():
    pmf = build_empirical_pmf([[0, 1, 0]] * 4, (2, 2, 2))
    assert pmf.entries() == {(0, 1, 0): 1.0}
    assert pmf.total_samples == 4


def test_two_rows_half_mass_each():
    pmf = build_empirical_pmf([[0, 0], [1, 1]], (2, 2))
    assert pmf.entries() == {(0, 0): 0.5, (1, 1): 0.5}


def test_empirical_matches_counting_oracle():
    rng = np.random.default_rng(0)
    rows = rng.integers(0, [3, 3, 3, 2], size=(500, 4))
    pmf = build_empirical_pmf(rows, (3, 3, 3, 2))
    expected = counting_histogram(rows)
    got = pmf.entries()
    assert got.keys() == expected.keys()
    for t, p in expected.items():
        assert got[t] == pytest.approx(p, abs=1e-15)
    assert pmf.nnz == len(set(map(tuple, rows.tolist())))
    assert abs(pmf.values.sum() - 1) <= 1e-12
    assert pmf.nnz <= pmf.total_samples


def test_entries_sorted_lexicographically():
    rows = [[2, 0], [0, 1], [1, 1], [0, 0], [2, 0]]
    pmf = build_empirical_pmf(rows, (3, 2))
    keys = list(pmf.entries())
    assert keys == sorted(keys)


def test_out_of_range_code_names_variable_and_row():
    with pytest.raises(IndexBoundsError) as info:
        build_empirical_pmf([[0, 1], [0, 3]], (2, 3))
    assert info.value.variable == 1
    assert info.value.row == 1


def test_sparse_tensor_rejects_bad_mass():
    with pytest.raises(ArgumentError):
        SparseCountTensor((2,), [[0], [1]], [0.5, 0.6], 2)
    with pytest.raises(ArgumentError):
        SparseCountTensor((2,), [[0], [1]], [1.0, 0.0], 2)


def test_rank_one_eval_is_product_of_marginals():
    margs = [np.array([0.2, 0.8]), np.array([0.5, 0.3, 0.2]), np.array([0.6, 0.4])]
    model = CpdModel([1.0], [m[:, None] for m in margs])
    assert model_eval(model, (1, 0, 1)) == pytest.approx(0.8 * 0.5 * 0.4, abs=1e-15)


def test_grid_sums_to_one():
    model = random_model((2, 2, 2), 3, seed=1)
    total = sum(model_eval(model, t) for t in itertools.product(range(2), repeat=3))
    assert total == pytest.approx(1.0, abs=1e-12)


def test_eval_matches_triple_loop():
    model = random_model((3, 4, 2), 3, seed=7)
    w, fac = model_params(model)
    assert model_eval(model, (1, 2, 0)) == pytest.approx(naive_eval(w, fac, (1, 2, 0)), abs=1e-15)
    # frozen from the loop oracle
    assert model_eval(model, (1, 2, 0)) == pytest.approx(0.042043582885923095, abs=1e-15)


def test_eval_bounds_error():
    model = random_model((3, 4, 2), 3, seed=7)
    with pytest.raises(IndexBoundsError):
        model_eval(model, (3, 0, 0))
    with pytest.raises(ArgumentError):
        model_eval(model, (0, 0))


def test_model_invariants_checked():
    with pytest.raises(InvariantError):
        CpdModel([0.5, 0.6], [np.full((2, 2), 0.5)])
    with pytest.raises(InvariantError):
        CpdModel([0.5, 0.5], [np.array([[0.7, 0.5], [0.4, 0.5]])])


def test_marginalize_all_is_identity():
    model = random_model((3, 2, 4, 2), 3, seed=2, label_index=3)
    same = marginalize(model, [0, 1, 2])
    for a, b in zip(model.factors, same.factors):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(model.weights, same.weights)
    assert same.label_index == 3


def test_marginalize_rank_one():
    margs = [np.array([0.2, 0.8]), np.array([0.5, 0.3, 0.2])]
    model = CpdModel([1.0], [m[:, None] for m in margs])
    sub = marginalize(model, [1])
    np.testing.assert_allclose(dense_joint(sub), margs[1], atol=1e-15)


def test_marginalize_matches_enumeration():
    model = random_model((2, 3, 2, 3, 2, 2), 4, seed=3, label_index=5)
    sub = marginalize(model, [1, 3], include_label=False)
    expected = marginal(full_joint(model), [1, 3])
    for t, p in expected.items():
        assert model_eval(sub, t) == pytest.approx(p, abs=1e-10)


def test_marginalize_empty_keep():
    with pytest.raises(ArgumentError):
        marginalize(random_model((2, 2), 2, seed=0), [])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), data=st.data())
def test_marginalization_consistency_property(seed, data):
    rng = np.random.default_rng(seed)
    n_vars = data.draw(st.integers(2, 5))
    dims = tuple(int(d) for d in rng.integers(2, 4, size=n_vars))
    model = random_model(dims, int(rng.integers(1, 5)), seed=seed)
    keep = data.draw(st.lists(st.integers(0, n_vars - 1), min_size=1, max_size=n_vars, unique=True))
    keep = sorted(keep)
    sub = marginalize(model, keep, include_label=False)
    expected = marginal(full_joint(model), keep)
    got = dense_joint(sub)
    for t, p in expected.items():
        assert abs(got[t] - p) <= 1e-10


def test_point_mass_sampling():
    model = CpdModel([0.0, 1.0], [np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 1.0]])])
    samples = sample_from_model(model, [0, 1], 200, seed=5)
    assert np.all(samples == [1, 1])


def test_sampling_frequencies_two_tuples():
    model = CpdModel([0.5, 0.5], [np.eye(2), np.eye(2)])
    samples = sample_from_model(model, [0, 1], 100_000, seed=9)
    freq_00 = np.mean(np.all(samples == [0, 0], axis=1))
    freq_11 = np.mean(np.all(samples == [1, 1], axis=1))
    assert abs(freq_00 - 0.5) <= 0.02
    assert abs(freq_11 - 0.5) <= 0.02
    assert freq_00 + freq_11 == 1.0


def test_sampling_deterministic():
    model = random_model((3, 4, 2), 3, seed=1)
    a = sample_from_model(model, [0, 2], 500, seed=42)
    b = sample_from_model(model, [0, 2], 500, seed=42)
    np.testing.assert_array_equal(a, b)
    c = sample_from_model(model, [0, 2], 500, seed=43)
    assert not np.array_equal(a, c)


def test_sampling_chi_square_agreement():
    model = random_model((3, 2, 3), 3, seed=4)
    T = 100_000
    samples = sample_from_model(model, [0, 1, 2], T, seed=17)
    exact = dense_joint(model)
    counts = np.zeros(exact.shape)
    np.add.at(counts, tuple(samples.T), 1)
    chi2 = np.sum((counts - T * exact) ** 2 / (T * exact))
    # 17 degrees of freedom; 99.9% quantile is about 40.8
    assert chi2 < 40.8


def test_sample_count_must_be_positive():
    with pytest.raises(ArgumentError):
        sample_from_model(random_model((2, 2), 1, seed=0), [0], 0)


def test_json_round_trip_bit_faithful():
    model = random_model((3, 4, 2), 5, seed=8, label_index=2)
    text = model.to_json(seed=8)
    back = CpdModel.from_json(text)
    np.testing.assert_array_equal(back.weights, model.weights)
    for a, b in zip(back.factors, model.factors):
        np.testing.assert_array_equal(a, b)
    assert back.label_index == 2
    d = json.loads(text)
    assert set(d) == {"rank", "lambda", "factors", "dims", "label_index", "seed", "fit_report"}
    assert d["factors"][0][1] == model.factors[0][1].tolist()
