import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import comb

from panicfsv.exceptions import ConfigurationError, ParameterDomainError
from panicfsv.regimes import RegimeTransition, enumerate_selectors, selector_matrix, transition_row


def test_three_assets_two_panics_lists_seven_states_in_order():
    space = enumerate_selectors(3, 2)
    assert space.S_K == 7
    got = ["".join(map(str, row)) for row in space.diagonals]
    assert got == ["000", "001", "010", "011", "100", "101", "110"]


def test_nine_assets_two_panics_count():
    assert enumerate_selectors(9, 2).S_K == 46


def test_no_panic_space_is_single_zero_diagonal():
    space = enumerate_selectors(2, 0)
    assert space.S_K == 1
    np.testing.assert_array_equal(space.diagonals, [[0, 0]])


@pytest.mark.parametrize("d_y,K", [(3, 3), (3, 5), (0, 0), (3, -1)])
def test_invalid_sizes_rejected(d_y, K):
    with pytest.raises(ConfigurationError):
        enumerate_selectors(d_y, K)


@pytest.mark.parametrize("regime,diag", [(1, [0, 0, 0]), (4, [0, 1, 1]), (7, [1, 1, 0])])
def test_selector_matrix_examples(regime, diag):
    np.testing.assert_array_equal(selector_matrix(enumerate_selectors(3, 2), regime), np.diag(diag))


@pytest.mark.parametrize("regime", [0, 8])
def test_selector_matrix_out_of_range(regime):
    with pytest.raises(IndexError):
        selector_matrix(enumerate_selectors(3, 2), regime)


def test_diagonals_are_read_only():
    space = enumerate_selectors(3, 1)
    with pytest.raises(ValueError):
        space.diagonals[0, 0] = 1


def test_table_lists_one_line_per_regime():
    lines = enumerate_selectors(3, 1).to_table().strip().splitlines()
    assert len(lines) == 1 + 4
    assert lines[-1].split("\t") == ["4", "100"]


@settings(max_examples=40, deadline=None)
@given(d_y=st.integers(1, 8), data=st.data())
def test_enumeration_is_sorted_unique_and_bounded(d_y, data):
    K = data.draw(st.integers(0, d_y - 1))
    space = enumerate_selectors(d_y, K)
    assert space.S_K == sum(comb(d_y, k, exact=True) for k in range(K + 1))
    values = space.diagonals @ (2 ** np.arange(d_y)[::-1])
    assert np.all(np.diff(values) > 0)
    assert space.diagonals.sum(axis=1).max() <= K


def test_transition_row_substitution():
    row = transition_row(RegimeTransition(0.5, 7), 3)
    np.testing.assert_allclose(row, [1 / 12, 1 / 12, 0.5, 1 / 12, 1 / 12, 1 / 12, 1 / 12], rtol=1e-15)


def test_table_persistence_off_diagonal():
    trans = RegimeTransition(0.87132, 46)
    assert trans.off_diagonal == pytest.approx((1 - 0.87132) / 45)
    assert trans.off_diagonal == pytest.approx(0.0028596, abs=5e-8)


def test_near_one_persistence_row_is_almost_unit_mass():
    row = transition_row(RegimeTransition(1 - 1e-9, 7), 2)
    assert row[1] == pytest.approx(1.0, abs=1e-8)
    assert row.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_persistence_outside_open_interval_rejected(p):
    with pytest.raises(ParameterDomainError):
        RegimeTransition(p, 3)


@settings(max_examples=60, deadline=None)
@given(S=st.integers(1, 60), p=st.floats(1e-6, 1 - 1e-6), seed=st.integers(0, 2**32 - 1))
def test_rank_one_predict_matches_dense_matrix(S, p, seed):
    trans = RegimeTransition(p, S)
    probs = np.random.default_rng(seed).dirichlet(np.ones(S))
    np.testing.assert_allclose(trans.predict(probs), probs @ trans.matrix(), atol=1e-14)
    np.testing.assert_allclose(trans.matrix().sum(axis=1), 1.0, atol=1e-12)
