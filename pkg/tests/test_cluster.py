import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import helpers
import oracles
from potalign import cluster, kernels
from potalign.datamodel import Interval
from potalign.pot import PotSet


_replay_min_members = helpers.replay_min_members


def random_hist(rng, V, sparsity=0.5):
    h = rng.random(V) * (rng.random(V) > sparsity)
    if h.sum() == 0:
        h[0] = 1
    return h / h.sum()


# ---------------------------------------------------------------------------
# codebook


def test_two_blobs():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.05, (200, 3)), rng.normal((5, 5, 5), 0.05, (200, 3))])
    cb = cluster.build_codebook(X, V=2, runs=8, seed=1)
    centers = sorted(cb.centers.tolist())
    np.testing.assert_allclose(centers[0], X[:200].mean(0), atol=0.1)
    np.testing.assert_allclose(centers[1], X[200:].mean(0), atol=0.1)


def test_lowest_energy_run_selected():
    X = np.random.default_rng(1).normal(size=(300, 4))
    cb = cluster.build_codebook(X, V=10, runs=8, seed=3)
    assert len(cb.run_energies) == 8
    assert all(cb.energy <= e for e in cb.run_energies)


def test_duplicates_only():
    X = np.repeat([[1.0, 2.0], [3.0, -1.0]], 20, axis=0)
    cb = cluster.build_codebook(X, V=2, runs=2)
    assert cb.energy == 0.0
    assert sorted(cb.centers.tolist()) == [[1.0, 2.0], [3.0, -1.0]]


def test_energy_monotone_within_runs():
    X = np.random.default_rng(2).normal(size=(500, 5))
    _, histories = cluster.build_codebook(X, V=25, runs=4, seed=0, return_history=True)
    for h in histories:
        assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(h, h[1:]))


def test_sample_too_small():
    with pytest.raises(cluster.CodebookError, match="smaller V"):
        cluster.build_codebook(np.zeros((5, 2)), V=10)


def test_codebook_deterministic():
    X = np.random.default_rng(4).normal(size=(200, 3))
    a = cluster.build_codebook(X, V=8, seed=9)
    b = cluster.build_codebook(X, V=8, seed=9)
    assert np.array_equal(a.centers, b.centers)


def test_quantize():
    rng = np.random.default_rng(5)
    cb = cluster.Codebook(rng.normal(size=(12, 19)), 0.0)
    assert cluster.quantize(cb.centers[5], cb)[0] == 5
    X = rng.normal(size=(300, 19))
    assert cluster.quantize(X, cb).tolist() == [oracles.nearest_center(x, cb.centers) for x in X]


def test_quantize_tie_lowest_index():
    cb = cluster.Codebook(np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]), 0.0)
    assert cluster.quantize([[0.0, 0.0], [1.0, 0.0]], cb).tolist() == [0, 0]


# ---------------------------------------------------------------------------
# BoWs


def test_interval_bow_counts():
    ps = PotSet("s", 3, [0, 1, 2, 3], [1, 2, 3, 4], [1, 2, 4, 20], np.zeros((4, 5)))
    words = np.array([1, 1, 2, 0])
    bow = cluster.interval_bow(Interval("s", 3, 10, "whole_shot"), ps, words, V=4)
    np.testing.assert_allclose(bow.weights, [0, 2 / 3, 1 / 3, 0])
    assert bow.count == 3
    empty = cluster.interval_bow(Interval("s", 12, 15, "whole_shot"), ps, words, V=4)
    assert empty.empty and not empty.weights.any()


def test_frame_counts_cover_span():
    ps = PotSet("s", 3, [0, 1], [1, 2], [0, 4], np.zeros((2, 5)))
    fc = cluster.frame_counts(ps, [1, 0], n_frames=6, V=2)
    assert fc[:, 1].tolist() == [1, 1, 1, 0, 0, 0]
    assert fc[:, 0].tolist() == [0, 0, 0, 0, 1, 1]


# ---------------------------------------------------------------------------
# distances


def test_hi_endpoints():
    b = np.array([0.2, 0.3, 0.5, 0.0])
    assert abs(cluster.hi_distance(b, b) + 1.0) <= 1e-12
    assert abs(cluster.hi_distance([1, 0], [0, 1]) + math.exp(-1)) <= 1e-12
    assert cluster.hi_distance([1, 0], [0, 1]) == pytest.approx(-0.367879, abs=1e-6)


def test_hi_random_matches_formula(rng):
    for _ in range(20):
        a, b = random_hist(rng, 30), random_hist(rng, 30)
        ref = -math.exp(-(1 - sum(min(x, y) for x, y in zip(a, b))))
        assert cluster.hi_distance(a, b) == pytest.approx(ref, abs=1e-14)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31), V=st.integers(1, 40))
def test_hi_range_and_symmetry(seed, V):
    rng = np.random.default_rng(seed)
    a, b = random_hist(rng, V), random_hist(rng, V)
    d = cluster.hi_distance(a, b)
    assert -1 - 1e-12 <= d <= -math.exp(-1) + 1e-12
    assert d == cluster.hi_distance(b, a)
    if not np.allclose(a, b):
        assert d > -1


def test_hi_strictly_decreasing():
    his = np.linspace(0, 1, 11)
    ds = [-math.exp(-(1 - h)) for h in his]
    assert all(x > y for x, y in zip(ds, ds[1:]))


def test_multichannel():
    rng = np.random.default_rng(8)
    a, b = random_hist(rng, 10), random_hist(rng, 10)
    assert cluster.multichannel_distance([a], [b], [1.0]) == pytest.approx(cluster.hi_distance(a, b), abs=1e-15)
    c, e = random_hist(rng, 6), random_hist(rng, 6)
    assert cluster.multichannel_distance([a, c], [a, c], [0.3, 0.7]) == -1.0
    hi1, hi2 = np.minimum(a, b).sum(), np.minimum(c, e).sum()
    ref = -math.exp(-((1 - hi1) / 0.4 + (1 - hi2) / 0.25))
    assert cluster.multichannel_distance([a, c], [b, e], [0.4, 0.25]) == pytest.approx(ref, abs=1e-14)


def test_multichannel_zero_average_skipped(caplog):
    a, b = np.array([1.0, 0]), np.array([0, 1.0])
    d = cluster.multichannel_distance([a, a], [b, a], [1.0, 0.0])
    assert d == pytest.approx(-math.exp(-1))
    assert "skipping" in caplog.text


def test_channel_averages_and_matrix(rng):
    H = np.array([random_hist(rng, 8) for _ in range(6)])
    A = cluster.channel_averages([H])
    ref = np.mean([1 - np.minimum(H[i], H[j]).sum() for i in range(6) for j in range(i + 1, 6)])
    assert A[0] == pytest.approx(ref)
    D = cluster.distance_matrix([H], [1.0])
    assert D[1, 4] == pytest.approx(cluster.hi_distance(H[1], H[4]))


# ---------------------------------------------------------------------------
# linkage


def test_line_points():
    x = np.array([0, 0.1, 10, 10.1])
    res = cluster.complete_linkage(np.abs(x[:, None] - x[None]), 2)
    assert res.assignment.tolist() == [0, 0, 1, 1]
    assert cluster.complete_linkage(np.abs(x[:, None] - x[None]), 4).assignment.tolist() == [0, 1, 2, 3]


@pytest.mark.parametrize("seed", range(20))
def test_merges_equal_naive(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    d = rng.random((n, n))
    if seed % 3 == 0:
        d = np.round(d, 1)  # force ties
    d = (d + d.T) / 2
    np.fill_diagonal(d, 0)
    merges = kernels.complete_linkage(d)
    assert _replay_min_members(merges, n) == oracles.naive_complete_linkage(d.tolist())


def test_heights_monotone_and_cut_consistent(rng):
    d = rng.random((15, 15))
    d = d + d.T
    res = cluster.complete_linkage(d, 4)
    assert np.all(np.diff(res.merges[:, 2]) >= 0)
    assert len(set(res.assignment)) == 4
    for k in range(1, 16):
        assert len(set(cluster.cut_merges(res.merges, 15, k))) == k


def test_cluster_bows_excludes_empty():
    bows = [cluster.BoW(np.array([1.0, 0]), 3), cluster.BoW(np.zeros(2), 0),
            cluster.BoW(np.array([0.9, 0.1]), 4), cluster.BoW(np.array([0, 1.0]), 2)]
    res = cluster.cluster_bows(bows, 2, items=["a", "b", "c", "d"])
    assert res.items == ["a", "c", "d"] and res.excluded == ["b"]
    assert res.assignment.tolist() == [0, 0, 1]
    back = cluster.ClusterResult.from_json(res.to_json())
    assert back.assignment.tolist() == res.assignment.tolist() and back.items == res.items


def test_default_k():
    assert cluster.default_k(40) == 10 and cluster.default_k(41) == 11 and cluster.default_k(1) == 1
