import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stein_lab.state_space import (OUT_OF_RANGE, BoxSpace, Carrier, ConfigSpace,
                                   StateSpaceOverflow, UniSpace, default_truncation,
                                   enumerate_states, neighbor)


def test_uni_enumeration():
    sp_ = UniSpace(3)
    states, index = enumerate_states(sp_)
    assert states == [0, 1, 2, 3]
    assert sp_.size == 4
    assert all(index[s] == s for s in states)


def test_box_enumeration():
    states, _ = enumerate_states(BoxSpace([1, 1]))
    assert states == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_config_enumeration_hand_count():
    c = Carrier(4.0, 1)
    sp_ = ConfigSpace(c, n_total_max=2, n_ab_max=1)
    # (n_S, n_a, n_b): 3 + 2 + 2 + 1 vectors
    assert sp_.size == 8
    expected = sorted(x for x in itertools.product(range(3), range(2), range(2)) if sum(x) <= 2)
    assert sp_.states() == expected
    assert sp_.state(sp_.empty_index()) == (0, 0, 0)


def test_neighbor_examples():
    assert neighbor(UniSpace(5), 5, (0, +1)) is OUT_OF_RANGE
    assert neighbor(BoxSpace([3, 3]), (1, 0), (1, -1)) is OUT_OF_RANGE
    sp_ = ConfigSpace(Carrier(4.0, 1), 5, 2)
    assert neighbor(sp_, (0, 1, 0), (1, -1)) == (0, 0, 0)
    assert not OUT_OF_RANGE


@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 3))
def test_config_count_closed_form(s_size, n_tot, n_ab):
    c = Carrier(4.0, s_size)
    sp_ = ConfigSpace(c, n_tot, n_ab)
    # count vectors: s_size free coordinates plus two capped ones
    want = 0
    for a in range(min(n_ab, n_tot) + 1):
        for b in range(min(n_ab, n_tot - a) + 1):
            r = n_tot - a - b
            want += math.comb(r + s_size, s_size)
    assert sp_.size == want


@given(st.lists(st.integers(1, 4), min_size=2, max_size=3))
def test_box_index_roundtrip(n_max):
    sp_ = BoxSpace(n_max)
    assert sp_.size == int(np.prod([n + 1 for n in n_max]))
    for i in range(sp_.size):
        assert sp_.index(sp_.state(i)) == i
    assert sp_.states() == sorted(sp_.states())


@given(st.integers(1, 3), st.integers(2, 6))
def test_config_index_roundtrip(s_size, n_tot):
    sp_ = ConfigSpace(Carrier(3.0, s_size), n_tot, 2)
    for i in range(sp_.size):
        assert sp_.index(sp_.state(i)) == i


def test_neighbor_indices_match_pointwise():
    sp_ = ConfigSpace(Carrier(4.0, 2), 4, 2)
    for move in sp_.moves:
        idx = sp_.neighbor_indices(move)
        for i, s in enumerate(sp_.states()):
            t = sp_.neighbor(s, move)
            assert idx[i] == (-1 if t is OUT_OF_RANGE else sp_.index(t))


def test_carrier_intensity_and_metric():
    c = Carrier(5.0, 3)
    assert np.isclose(c.intensity[c.index_a], 0.2)
    assert np.isclose(c.intensity[c.index_b], 0.2)
    assert np.isclose(c.intensity.sum(), 5.0)
    assert np.allclose(c.d0, 1 - np.eye(5))
    assert c.is_discrete


def test_carrier_rejects_bad_input():
    with pytest.raises(ValueError):
        Carrier(1.0)
    bad = np.array([[0, 0.1, 0.9], [0.1, 0, 0.1], [0.9, 0.1, 0]])
    with pytest.raises(ValueError):
        Carrier(4.0, 3, bad)


def test_overflow(monkeypatch):
    monkeypatch.setenv("STEIN_LAB_MAX_STATES", "50")
    with pytest.raises(StateSpaceOverflow):
        BoxSpace([10, 10])


def test_default_truncation():
    assert default_truncation(100) == math.ceil(100 + 120 + 20)
