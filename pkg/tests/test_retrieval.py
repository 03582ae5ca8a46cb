import numpy as np
import pytest

from craft.data import MultivariateSeries
from craft.graph import RelationGraph
from craft.memory import Memory
from craft.retrieval import (
    EPS,
    OpCounter,
    QuerySpectrum,
    candidate_pool,
    retrieve_agnostic,
    retrieve_all,
    retrieve_batch,
    retrieve_channel,
    spectral_similarity,
)
from craft.spectral import SpectralKey, build_knowledge_base
from conftest import make_kb, periodic_series, random_series
from oracles import complex_similarity_loop, exhaustive_search


def _key(spec):
    spec = np.asarray(spec, dtype=complex)
    return SpectralKey(spec, float(np.linalg.norm(spec)), 0, 0)


def _query(spec):
    spec = np.asarray(spec, dtype=complex)
    return QuerySpectrum(spec, float(np.linalg.norm(spec)))


def test_self_match():
    rng = np.random.default_rng(0)
    spec = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    spec *= 10 / np.linalg.norm(spec)
    s = spectral_similarity(_query(spec), _key(spec), 1e-8)
    assert s < 1.0
    assert s == pytest.approx(1.0 - 1e-10, abs=1e-12)


def test_quadrature_key_scores_zero():
    rng = np.random.default_rng(1)
    spec = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    assert abs(spectral_similarity(_query(spec), _key(1j * spec))) <= 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_matches_scalar_loop(seed):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    k = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    got = spectral_similarity(_query(q), _key(k), EPS)
    assert got == pytest.approx(complex_similarity_loop(q, k, EPS), rel=1e-12)
    assert -1 - 1e-9 <= got <= 1 + 1e-9


def test_similarity_length_mismatch():
    with pytest.raises(ValueError):
        spectral_similarity(_query([1, 2]), _key([1, 2, 3]))


def _graph(ids):
    ids = np.asarray(ids, dtype=np.int64)
    return RelationGraph(ids, np.zeros(ids.shape))


def test_candidate_pool():
    g = _graph([[1, 2, 3], [0, 2, 3], [3, 1, 0], [0, 1, 2], [0, 1, 2], [0, 1, 2], [0, 1, 2]])
    assert len(candidate_pool(g, 0)) == 4
    assert candidate_pool(g, 2) == [2, 3, 1, 0]
    full = _graph([[1, 2], [0, 2], [0, 1]])
    assert sorted(candidate_pool(full, 1)) == [0, 1, 2]


@pytest.fixture(scope="module")
def kb8():
    return make_kb(random_series(400, 8, seed=7), 64, 8, 7, 8)


def test_exact_match_recall(kb8):
    s = random_series(400, 8, seed=7)
    i = 123
    x_c = s.values[i : i + 64, 5]
    refs = retrieve_channel(kb8, x_c, 5, 1)
    assert refs[0].source_entry == i and refs[0].source_channel == 5
    assert refs[0].score == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_array_equal(refs[0].value, s.values[i + 64 : i + 72, 5])


def test_exclusion(kb8):
    x = np.random.default_rng(0).standard_normal(64)
    lo, hi = int(kb8.t_end[0]) - 64, int(kb8.t_end[-1]) + 10
    assert retrieve_channel(kb8, x, 0, 3, exclude=(lo, hi)) == []
    # excluding a single span removes every entry overlapping it
    t = int(kb8.t_end[100])
    refs = retrieve_channel(kb8, x, 0, 500, exclude=(t, t))
    for ref in refs:
        te = kb8.t_end[ref.source_entry]
        assert te + 8 < t or te - 63 > t


@pytest.mark.parametrize("seed", range(20))
def test_full_graph_equals_exhaustive(kb8, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(64)
    c = int(rng.integers(8))
    got = [(r.source_channel, r.source_entry, r.score) for r in retrieve_channel(kb8, x, c, 5)]
    assert got == exhaustive_search(kb8, x, 5)


def test_retrieve_all_is_per_channel(kb8):
    x = np.random.default_rng(2).standard_normal((64, 8))
    res = retrieve_all(kb8, x, 2)
    assert len(res) == 8
    for c in range(8):
        single = retrieve_channel(kb8, x[:, c], c, 2)
        assert [(r.source_channel, r.source_entry, r.score) for r in res[c]] == [
            (r.source_channel, r.source_entry, r.score) for r in single
        ]
    # changing another channel's query leaves channel 0 untouched
    x2 = x.copy()
    x2[:, 3] += 5.0
    res2 = retrieve_all(kb8, x2, 2)
    assert [r.source_entry for r in res2[0]] == [r.source_entry for r in res[0]]


def test_single_channel_reduces_to_retrieve_channel():
    s = random_series(120, 1, seed=3)
    mem = Memory.from_series(s, 16, 4)
    kb = build_knowledge_base(mem, RelationGraph(np.zeros((1, 0), np.int64), np.zeros((1, 0))), 3)
    x = np.random.default_rng(4).standard_normal((16, 1))
    a = retrieve_all(kb, x, 3)[0]
    b = retrieve_channel(kb, x[:, 0], 0, 3)
    assert [(r.source_entry, r.score) for r in a] == [(r.source_entry, r.score) for r in b]


def test_channel_permutation_equivariance():
    s = random_series(300, 5, seed=12)
    perm = np.array([3, 0, 4, 1, 2])
    sp = MultivariateSeries(s.values[:, perm], tuple(s.channel_names[p] for p in perm))
    kb, kbp = make_kb(s, 32, 4, 2, 6), make_kb(sp, 32, 4, 2, 6)
    x = np.random.default_rng(1).standard_normal((32, 5))
    res = retrieve_all(kb, x, 3)
    resp = retrieve_all(kbp, x[:, perm], 3)
    for new_c, old_c in enumerate(perm):
        a = [(int(perm[r.source_channel]), r.source_entry, r.score) for r in resp[new_c]]
        b = [(r.source_channel, r.source_entry, r.score) for r in res[old_c]]
        assert a == b


def test_pruning_monotonicity():
    s = random_series(300, 6, seed=21)
    kb = make_kb(s, 32, 4, 5, 6)
    rng = np.random.default_rng(5)
    for _ in range(30):
        x = rng.standard_normal(32)
        c = int(rng.integers(6))
        prev = -np.inf
        for m in range(1, 6):
            top = retrieve_channel(kb.with_graph(kb.graph.truncate(m)), x, c, 1)[0].score
            assert top >= prev
            prev = top


def test_rank_invariant_to_query_scale(kb8):
    rng = np.random.default_rng(9)
    for _ in range(20):
        x = rng.standard_normal(64)
        lam = float(rng.uniform(0.1, 50))
        a = [(r.source_channel, r.source_entry) for r in retrieve_channel(kb8, x, 2, 10)]
        b = [(r.source_channel, r.source_entry) for r in retrieve_channel(kb8, lam * x, 2, 10)]
        assert a == b


def test_op_counter(kb8):
    x = np.random.default_rng(3).standard_normal((64, 8))
    oc = OpCounter()
    retrieve_all(kb8, x, 1, counter=oc)
    N = kb8.config.n_entries
    assert oc.pool_sizes == [8 * N] * 8
    assert oc.similarity_evals == sum(oc.pool_sizes) <= 8 * (7 + 1) * N
    pruned = kb8.with_graph(kb8.graph.truncate(2))
    oc2 = OpCounter()
    retrieve_all(pruned, x, 1, counter=oc2)
    assert oc2.similarity_evals == 8 * 3 * N


def test_cross_channel_value_semantics():
    s = random_series(200, 3, seed=4)
    kb = make_kb(s, 16, 4, 2, 4)
    # query channel 0 with an exact copy of channel 2's window: the value comes from channel 2
    i = 50
    refs = retrieve_channel(kb, s.values[i : i + 16, 2], 0, 1)
    assert refs[0].source_channel == 2 and refs[0].source_entry == i
    np.testing.assert_array_equal(refs[0].value, s.values[i + 16 : i + 20, 2])


def test_period_matching_channel_wins():
    # channel 0 period 24, channel 1 period 7; query a fresh period-24 window
    L = 168
    s = periodic_series([24, 7], 1500, noise=0.2, seed=0)
    kb = make_kb(s, L, 24, 1, 30)
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(200):
        phase = rng.uniform(0, 2 * np.pi)
        x = np.sin(2 * np.pi * np.arange(L) / 24 + phase) + 0.2 * rng.standard_normal(L)
        if retrieve_channel(kb, x, 1, 1)[0].source_channel == 0:
            hits += 1
    assert hits >= 190


def test_batch_validation(kb8):
    with pytest.raises(ValueError):
        retrieve_batch(kb8, np.zeros((1, 10, 8)), 1)
    with pytest.raises(ValueError):
        retrieve_batch(kb8, np.zeros((1, 64, 8)), 0)
    with pytest.raises(IndexError):
        retrieve_batch(kb8, np.zeros((1, 64, 1)), 1, channels=[8])


def test_agnostic_shares_one_reference(kb8):
    x = np.random.default_rng(0).standard_normal((64, 8))
    ref = retrieve_agnostic(kb8, x)
    assert 0 <= ref.source_channel < 8
    assert ref.value.shape == (8,)
