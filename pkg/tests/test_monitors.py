import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from driftgate.monitors import (
    EmbeddingWindow, EvidenceVector, MonitorSuite, ReferenceStats, discriminator_auc, median_bandwidth,
    mmd2_unbiased, predictive_entropy, entropy_shift, rank_auc, slice_max_mmd2, standardize, streaming_ece,
    unstandardize,
)


def brute_mmd2(X, Y, s2):
    k = lambda u, v: math.exp(-float(np.sum((u - v) ** 2)) / (2 * s2))
    m, n = len(X), len(Y)
    xx = sum(k(X[i], X[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    yy = sum(k(Y[i], Y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    xy = sum(k(x, y) for x in X for y in Y) / (m * n)
    return xx + yy - 2 * xy


def brute_auc(pos, neg):
    s = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return s / (len(pos) * len(neg))


def test_median_bandwidth_examples():
    assert median_bandwidth(np.array([[0.0], [2.0]])) == 4.0
    assert median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == 4.0
    assert median_bandwidth(np.ones((5, 3))) == 1.0
    with pytest.raises(ValueError):
        median_bandwidth(np.zeros((1, 2)))


def test_mmd_hand_examples():
    assert mmd2_unbiased(np.array([[0.0], [0.0]]), np.array([[1.0], [1.0]]), 1.0) == pytest.approx(
        2 - 2 * math.exp(-0.5), abs=1e-9)
    assert abs(2 - 2 * math.exp(-0.5) - 0.78694) < 5e-6
    a = np.array([[0.3, -1.0], [0.3, -1.0]])
    assert mmd2_unbiased(a, a.copy(), 0.7) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((1, 1)), np.zeros((3, 1)), 1.0)
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((2, 1)), np.zeros((3, 1)), 0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(2, 7), st.integers(1, 3), st.floats(0.1, 5.0), st.integers(0, 2**31))
def test_mmd_matches_bruteforce_and_is_symmetric(m, n, p, s2, seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(m, p)), rng.normal(1, 1, size=(n, p))
    v = mmd2_unbiased(X, Y, s2)
    assert v == pytest.approx(brute_mmd2(X, Y, s2), abs=1e-9)
    assert v == pytest.approx(mmd2_unbiased(Y, X, s2), abs=1e-12)


def test_mmd_null_mean_is_zero():
    rng = np.random.default_rng(5)
    vals = np.array([mmd2_unbiased(rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), 1.0) for _ in range(10_000)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean()) < 3 * se


def test_auc_examples():
    assert rank_auc([0.9, 0.8], [0.2, 0.1]) == 1.0
    assert rank_auc([0.4, 0.4], [0.4, 0.4]) == 0.5
    assert rank_auc([0.9, 0.3], [0.5, 0.1]) == 0.75


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_auc_matches_pairwise_count(pos, neg):
    assert rank_auc(pos, neg) == pytest.approx(brute_auc(pos, neg), abs=1e-12)


def test_discriminator_null_and_shift():
    rng = np.random.default_rng(2)
    aucs = [discriminator_auc(rng.normal(size=(256, 4)), rng.normal(size=(256, 4)), 0.5, rng).value for _ in range(100)]
    assert abs(np.mean(aucs) - 0.5) < 0.15
    shifted = discriminator_auc(rng.normal(2, 1, size=(128, 4)), rng.normal(size=(128, 4)), 0.5, rng)
    assert shifted.value > 0.9 and not shifted.degenerate
    deg = discriminator_auc(rng.normal(size=(1, 4)), rng.normal(size=(10, 4)), 0.5, rng)
    assert deg == (0.5, True)


def test_entropy_examples():
    assert predictive_entropy([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    assert predictive_entropy([1.0, 0.0]) == 0.0
    assert predictive_entropy([0.7, 0.2, 0.1]) == pytest.approx(0.801819, abs=5e-7)
    with pytest.raises(ValueError):
        predictive_entropy([0.5, 0.6])
    assert entropy_shift([[1.0, 0.0]] * 3, math.log(2)) == pytest.approx(-math.log(2), abs=1e-12)
    assert entropy_shift([[0.25] * 4] * 5, 0.0) == pytest.approx(math.log(4), abs=1e-12)
    P = np.array([[0.2, 0.8], [0.6, 0.4]])
    assert entropy_shift(P, entropy_shift(P, 0.0)) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        entropy_shift(np.empty((0, 2)), 0.0)


@settings(max_examples=100, deadline=None)
@given(arrays(float, 4, elements=st.floats(-0.2, 0.2)))
def test_entropy_maximized_by_uniform(eps):
    eps = eps - eps.mean()
    p = 0.25 + eps * 0.9
    assert predictive_entropy(p / p.sum()) <= math.log(4) + 1e-12


def test_ece_examples():
    assert streaming_ece([(0.8, 1)] * 4 + [(0.8, 0)], bins=1).value == pytest.approx(0.0, abs=1e-12)
    v = streaming_ece([(0.9, 1), (0.8, 0), (0.3, 0)], bins=2)
    assert v.value == pytest.approx((2 / 3) * abs(0.5 - 0.85) + (1 / 3) * 0.3, abs=1e-9)
    assert v.value == pytest.approx(1 / 3, abs=1e-9)
    assert streaming_ece([(1.0, 0)] * 3).value == 1.0
    assert streaming_ece([]) == (0.0, True)
    with pytest.raises(ValueError):
        streaming_ece([(1.2, 1)])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40), st.integers(1, 15),
       st.randoms(use_true_random=False))
def test_ece_bounded_and_permutation_invariant(pairs, bins, rnd):
    v = streaming_ece(pairs, bins).value
    assert 0.0 <= v <= 1.0
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert streaming_ece(shuffled, bins).value == pytest.approx(v, abs=1e-12)


def test_slice_max_mmd2():
    rng = np.random.default_rng(0)
    Xa, Xb = rng.normal(size=(10, 2)), rng.normal(3, 1, size=(10, 2))
    Ya, Yb = rng.normal(size=(12, 2)), rng.normal(size=(12, 2))
    rec = EmbeddingWindow(np.vstack([Xa, Xb]), "recent", np.r_[np.zeros(10), np.ones(10)])
    ref = EmbeddingWindow(np.vstack([Ya, Yb]), "reference", np.r_[np.zeros(12), np.ones(12)])
    v = slice_max_mmd2(rec, ref, 1.0)
    assert v.value == pytest.approx(max(brute_mmd2(Xa, Ya, 1.0), brute_mmd2(Xb, Yb, 1.0)), abs=1e-9)
    assert v.value == pytest.approx(brute_mmd2(Xb, Yb, 1.0), abs=1e-9)
    lone = EmbeddingWindow(np.zeros((2, 2)), "recent", np.array([0, 1]))
    assert slice_max_mmd2(lone, ref, 1.0) == (0.0, True)
    with pytest.raises(ValueError):
        slice_max_mmd2(EmbeddingWindow(np.zeros((3, 2))), ref, 1.0)


def test_standardize_examples_and_roundtrip():
    stats = ReferenceStats(np.array([1.0, 0.5, 0.0, 0.0, 2.0]), np.array([2.0, 0.1, 1.0, 0.0, 1.0]))
    raw = EvidenceVector(*stats.mean)
    assert np.allclose(standardize(raw, stats).standardized, 0.0)
    up = EvidenceVector(*(stats.mean + stats.std))
    z = standardize(up, stats).standardized
    assert np.allclose(z[[0, 1, 2, 4]], 1.0, atol=1e-4)
    big = standardize(EvidenceVector(1.0, 0.5, 0.0, 0.3, 2.0), stats).standardized
    assert np.isfinite(big).all() and big[3] == pytest.approx(0.3 / 1e-6)
    assert np.allclose(unstandardize(big, stats), [1.0, 0.5, 0.0, 0.3, 2.0], atol=1e-12)
    with pytest.raises(ValueError):
        ReferenceStats(np.zeros(5), -np.ones(5))
    with pytest.raises(ValueError):
        ReferenceStats(np.zeros(5), np.ones(5), epsilon=0.0)


def test_suite_cache_matches_direct_evaluation():
    rng = np.random.default_rng(1)
    ref = EmbeddingWindow(rng.normal(size=(200, 3)), "reference", (rng.random(200) < 0.3).astype(int))
    rec = EmbeddingWindow(rng.normal(0.5, 1, size=(40, 3)), "recent", (rng.random(40) < 0.3).astype(int))
    suite = MonitorSuite(ref)
    P = np.full((40, 2), 0.5)
    lab = np.empty((0, 2))
    cached = suite.raw(rec, P, lab, 0.6, 0.0, np.random.default_rng(3))
    direct = suite.raw(rec, P, lab, 0.6, 0.0, np.random.default_rng(3), reference=EmbeddingWindow(
        ref.points, "reference", ref.group_tags))
    # same reference; only the bandwidth pool differs, so compare at a shared bandwidth
    s2 = 1.7
    from driftgate.monitors import _mmd2_ref_sqd
    assert _mmd2_ref_sqd(rec.points, ref.points, suite._ref_sqd, s2) == pytest.approx(
        mmd2_unbiased(rec, ref, s2), abs=1e-12)
    assert cached.entropy_shift == direct.entropy_shift
    assert 0.0 <= cached.disc_auc <= 1.0
