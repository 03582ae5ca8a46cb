import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from craft.data import MultivariateSeries
from craft.graph import (
    build_graph,
    concat_trajectory,
    cosine_similarity,
    similarity_matrix,
    trajectory_gram,
)
from craft.memory import Memory, MemoryEntry
from conftest import random_series
from oracles import brute_force_neighbors, scalar_cosine


def _entries(keys):
    return [MemoryEntry(k, np.zeros((1, k.shape[1])), i) for i, k in enumerate(keys)]


def test_concat_trajectory():
    keys = [np.array([[1.0, 0], [2, 0], [3, 0]]), np.array([[4.0, 0], [5, 0], [6, 0]])]
    traj = concat_trajectory(_entries(keys), 0)
    assert np.array_equal(traj.z, [1, 2, 3, 4, 5, 6])
    assert traj.z.shape == (2 * 3,)
    single = concat_trajectory(_entries(keys[:1]), 0)
    assert np.array_equal(single.z, keys[0][:, 0])
    with pytest.raises(IndexError):
        concat_trajectory(_entries(keys), 2)


def test_cosine_examples():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    # hand arithmetic: 1*2 + 2*4.1 = 10.2; |a| = sqrt(5); |b| = sqrt(4 + 16.81)
    expected = 10.2 / (5**0.5 * 20.81**0.5)
    assert cosine_similarity([1, 2], [2, 4.1]) == pytest.approx(expected, abs=1e-15)
    assert cosine_similarity([0, 0], [1, 2]) == 0.0
    with pytest.raises(ValueError):
        cosine_similarity([1, 2], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3).filter(lambda v: sum(x * x for x in v) > 1e-3),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3).filter(lambda v: sum(x * x for x in v) > 1e-3),
       st.floats(0.01, 100))
def test_cosine_symmetric_scale_invariant(a, b, lam):
    s = cosine_similarity(a, b)
    assert -1.0 <= s <= 1.0
    assert s == cosine_similarity(b, a)
    assert cosine_similarity(np.array(a) * lam, b) == pytest.approx(s, abs=1e-12)
    assert s == pytest.approx(scalar_cosine(a, b), abs=1e-12)


def test_gram_from_source_matches_stacked_keys():
    s = random_series(120, 5, seed=2)
    mem = Memory.from_series(s, 16, 4, stride=3)
    stacked = Memory(np.array(mem.keys), np.array(mem.values), mem.t_end)
    np.testing.assert_allclose(trajectory_gram(mem), trajectory_gram(stacked), rtol=1e-12)


def test_forced_neighbor():
    rng = np.random.default_rng(0)
    base = rng.standard_normal(60)
    other = rng.standard_normal(60)
    other -= (other @ base) / (base @ base) * base  # orthogonal to base
    keys = [np.stack([base, base, other], axis=1)]
    g = build_graph(_entries(keys), 1)
    assert g.ids[0].tolist() == [1] and g.ids[1].tolist() == [0]
    assert g.scores[0, 0] == pytest.approx(1.0)


def test_full_ranking_when_m_is_c_minus_1():
    s = random_series(80, 5, seed=4)
    g = build_graph(Memory.from_series(s, 8, 2), 4)
    for c in range(5):
        assert sorted(g.ids[c].tolist()) == [j for j in range(5) if j != c]
        assert np.all(np.diff(g.scores[c]) <= 0)


def test_m_too_large_is_clamped(caplog):
    s = random_series(50, 3)
    with caplog.at_level(logging.WARNING):
        g = build_graph(Memory.from_series(s, 8, 2), 5)
    assert g.m == 2
    assert "clamping" in caplog.text


@pytest.mark.parametrize("seed", range(5))
def test_graph_matches_brute_force(seed):
    # correlated channels so rankings are non-trivial
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((150, 3))
    values = latent @ rng.standard_normal((3, 8)) + 0.5 * rng.standard_normal((150, 8))
    mem = Memory.from_series(MultivariateSeries(values, tuple("abcdefgh")), 12, 3)
    for m in (1, 3, 7):
        g = build_graph(mem, m)
        assert g.ids.tolist() == brute_force_neighbors(np.asarray(mem.keys), m)


def test_graph_invariants():
    s = random_series(100, 6, seed=9)
    mem = Memory.from_series(s, 10, 2)
    sim = similarity_matrix(mem)
    assert np.array_equal(sim, sim.T)  # bit-equal symmetry
    g = build_graph(mem, 3)
    assert np.all(np.abs(g.scores) <= 1.0)
    for c in range(6):
        assert c not in g.ids[c]
        assert len(set(g.ids[c].tolist())) == 3
    g2 = build_graph(mem, 3)
    assert np.array_equal(g.ids, g2.ids) and np.array_equal(g.scores, g2.scores)


def test_scale_invariance_of_neighbors():
    s = random_series(100, 6, seed=11)
    mem = Memory.from_series(s, 10, 2)
    scaled_values = s.values.copy()
    scaled_values[:, 2] *= 37.5
    mem2 = Memory.from_series(MultivariateSeries(scaled_values, s.channel_names), 10, 2)
    g, g2 = build_graph(mem, 5), build_graph(mem2, 5)
    assert np.array_equal(g.ids, g2.ids)
    np.testing.assert_allclose(g.scores, g2.scores, atol=1e-12)


def test_ties_prefer_lower_channel_id():
    col = np.random.default_rng(3).standard_normal(30)
    keys = [np.stack([col, col, col, col], axis=1)]
    g = build_graph(_entries(keys), 2)
    assert g.ids.tolist() == [[1, 2], [0, 2], [0, 1], [0, 1]]


def test_zero_channel_has_zero_similarity():
    rng = np.random.default_rng(5)
    keys = [np.stack([rng.standard_normal(20), np.zeros(20), rng.standard_normal(20)], axis=1)]
    sim = similarity_matrix(_entries(keys))
    assert sim[1, 0] == 0.0 and sim[1, 2] == 0.0


def test_adjacency_text():
    s = random_series(60, 3)
    g = build_graph(Memory.from_series(s, 8, 2), 2)
    text = g.adjacency_text(["x", "y", "z"])
    assert text.splitlines()[0].startswith("x: ")
    assert len(text.splitlines()) == 3
    assert g.truncate(1).ids.tolist() == g.ids[:, :1].tolist()
