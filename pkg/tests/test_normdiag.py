import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from driftlab.errors import DimensionMismatch, NonFiniteInput
from driftlab.normdiag import (
    NormStats,
    apply_norm,
    effective_rank,
    fit_norm,
    singular_values,
    spectrum,
)
from oracles import singular_values_exact
from strategies import matrices


# -------------------------------------------------------------- z-scores

def test_constant_column_has_zero_std():
    s = fit_norm([[1.0], [1.0], [1.0]])
    assert s.mean[0] == 1.0 and s.std[0] == 0.0


def test_two_point_column():
    s = fit_norm([[0.0], [2.0]])
    assert s.mean[0] == 1.0 and s.std[0] == 1.0


def test_three_by_two_example():
    s = fit_norm([[1, 10], [2, 20], [3, 30]])
    np.testing.assert_allclose(s.mean, [2.0, 20.0])
    np.testing.assert_allclose(s.std, [math.sqrt(2 / 3), 10 * math.sqrt(2 / 3)], rtol=1e-15)


def test_apply_with_given_stats():
    z = apply_norm([[0.0], [2.0]], NormStats([1.0], [1.0]))
    np.testing.assert_array_equal(z[:, 0], [-1.0, 1.0])


def test_constant_column_maps_to_zero():
    x = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]])
    z = apply_norm(x, fit_norm(x))
    np.testing.assert_array_equal(z[:, 0], 0.0)


def test_wrong_width_is_rejected():
    with pytest.raises(DimensionMismatch):
        apply_norm(np.zeros((3, 2)), NormStats([0.0], [1.0]))


@given(matrices(max_rows=12, max_cols=6, elements=st.floats(-1e3, 1e3)))
def test_normalized_columns_are_standard(x):
    s = fit_norm(x)
    z = apply_norm(x, s)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-10)
    sd = z.std(axis=0)
    for j in range(x.shape[1]):
        if s.std[j] == 0:
            assert sd[j] == 0
        elif s.std[j] > 1e-6 * max(1.0, np.abs(x[:, j]).max()):
            assert abs(sd[j] - 1) < 1e-10


# ------------------------------------------------------------- spectrum

def test_identity():
    np.testing.assert_allclose(singular_values(np.eye(3)), [1, 1, 1])


def test_permuted_diagonal():
    a = np.diag([3.0, 2.0, 1.0])[[2, 0, 1]]
    np.testing.assert_allclose(singular_values(a), [3, 2, 1])


@pytest.mark.parametrize("seed", range(5))
def test_random_6x4_matches_charpoly_oracle(seed):
    a = np.random.default_rng(seed).normal(size=(6, 4))
    np.testing.assert_allclose(singular_values(a), singular_values_exact(a), rtol=1e-6)


def test_rank_deficient_pads_with_zeros():
    a = np.outer([1.0, 2.0, 3.0], [1.0, -1.0, 0.5, 2.0])
    s = singular_values(a)
    assert s.shape == (4,)
    assert s[0] == pytest.approx(np.linalg.norm(a))
    assert np.all(s[1:] < 1e-12 * s[0])


def test_non_finite_input():
    with pytest.raises(NonFiniteInput):
        singular_values([[1.0, np.nan]])


@given(matrices())
def test_frobenius_identity(a):
    s = singular_values(a)
    fro = float(np.sum(a * a))
    assert abs(float(np.sum(s * s)) - fro) <= 1e-8 * max(fro, 1e-300)


@given(matrices())
def test_sorted_non_negative(a):
    s = singular_values(a)
    assert np.all(s >= 0)
    assert np.all(np.diff(s) <= 0)


@given(matrices(elements=st.floats(-10, 10)), st.randoms(use_true_random=False))
def test_invariant_under_permutations(a, rnd):
    rows = list(range(a.shape[0]))
    cols = list(range(a.shape[1]))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    s = singular_values(a)
    np.testing.assert_allclose(singular_values(a[rows][:, cols]), s, atol=1e-10 * max(1.0, s[0]))


@given(matrices(elements=st.floats(-10, 10)),
       st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7), st.floats(0, 2 * math.pi)), max_size=6))
def test_invariant_under_givens_rotations(a, rotations):
    n = a.shape[0]
    q = np.eye(n)
    for i, j, th in rotations:
        i, j = i % n, j % n
        if i == j:
            continue
        g = np.eye(n)
        g[i, i] = g[j, j] = math.cos(th)
        g[i, j], g[j, i] = -math.sin(th), math.sin(th)
        q = g @ q
    s = singular_values(a)
    np.testing.assert_allclose(singular_values(q @ a), s, atol=1e-9 * max(1.0, s[0]))


def test_effective_rank():
    assert effective_rank(np.array([1.0, 1e-3, 1e-12])) == 2
    assert effective_rank(np.zeros(3)) == 0


def test_csv_has_index_sigma_rows():
    rep = spectrum(np.random.default_rng(0).normal(size=(10, 3)))
    lines = rep.to_csv("raw").splitlines()
    assert lines[0] == "index,sigma"
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == rep.singular_values_raw[0]
    assert rep.to_csv("normalized") != rep.to_csv("raw")


@given(arrays(np.float64, (20, 4), elements=st.floats(-1, 1)))
def test_dominant_channel_does_not_raise_raw_rank(x):
    x = x.copy()
    x[:, 0] = 1e4 + x[:, 0]
    rep = spectrum(x)
    # Centering can remove at most the one direction the offset occupied.
    assert rep.effective_rank_normalized >= rep.effective_rank_raw - 1
