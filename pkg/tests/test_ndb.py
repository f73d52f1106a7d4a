import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbgnn.data import gaussian_ring
from mbgnn.errors import DataError, ParameterError
from mbgnn.ndb import NdbBins, assign, fit_bins, kmeans, ndb_from_bins, ndb_score, proportion_z
from mbgnn.rng import SeededRng


def ring(rng, n, modes=8):
    return gaussian_ring(modes, n, rng).features


def test_proportion_z_hand_computed():
    # 30/100 vs 50/100: pooled 0.4, se = sqrt(0.4 * 0.6 * 0.02)
    expected = 0.2 / math.sqrt(0.4 * 0.6 * 0.02)
    assert abs(proportion_z(30, 100, 50, 100) - expected) < 1e-12
    assert proportion_z(0, 10, 0, 10) == 0.0


def test_assign_ties_go_to_lower_bin():
    centroids = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert assign(np.array([[0.0, 5.0]]), centroids).tolist() == [0]


def test_kmeans_recovers_separated_clusters():
    r = SeededRng(0)
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    x = np.vstack([c + r.normal((100, 2), 0.1) for c in centers])
    found = kmeans(x, 3, SeededRng(1))
    for c in centers:
        assert np.min(np.linalg.norm(found - c, axis=1)) < 0.1
    assert kmeans(x, 3, SeededRng(1)).tobytes() == found.tobytes()
    with pytest.raises(ParameterError):
        kmeans(x, 0, SeededRng(1))


@pytest.mark.parametrize("seed", range(5))
def test_identical_distribution_scores_low(seed):
    r = SeededRng(seed)
    rep = ndb_score(ring(r.stream("a"), 2000), ring(r.stream("b"), 2000), 20, 0.05, r.stream("bins"))
    assert rep.ndb_score <= 0.15


def test_null_false_positive_rate_matches_significance():
    """Monte-Carlo oracle: over repeated null draws the mean NDB is near the test level."""
    r = SeededRng(10)
    train = ring(r.stream("train"), 2000)
    bins = fit_bins(train, 20, r.stream("bins"))
    scores = [ndb_from_bins(bins, ring(r.stream(f"gen.{i}"), 2000), 0.05).ndb_score for i in range(40)]
    assert 0.01 <= float(np.mean(scores)) <= 0.1


def test_single_mode_collapse_scores_high():
    r = SeededRng(11)
    train = ring(r.stream("train"), 2000)
    collapsed = np.array([2.0, 0.0]) + r.normal((2000, 2), 0.05)
    rep = ndb_score(train, collapsed, 20, 0.05, r.stream("bins"))
    assert rep.ndb_score >= 0.8


def test_empty_train_bins_are_excluded():
    bins = NdbBins(np.array([[0.0], [10.0], [20.0]]), np.array([50, 0, 50]), 100)
    rep = ndb_from_bins(bins, np.array([[0.0]] * 50 + [[20.0]] * 50), 0.05)
    assert rep.excluded_bins == [1]
    assert rep.significant == [False, False, False]
    assert rep.ndb_score == 0.0
    rep = ndb_from_bins(bins, np.array([[0.0]] * 100), 0.05)
    assert rep.ndb_score == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**63))
def test_score_in_unit_interval_and_relabel_invariant(seed):
    r = SeededRng(seed)
    train = r.normal((300, 2))
    gen = r.normal((200, 2), 1.5) + 0.3
    bins = fit_bins(train, 8, r.stream("bins"))
    rep = ndb_from_bins(bins, gen, 0.05)
    assert 0.0 <= rep.ndb_score <= 1.0
    perm = r.permutation(8)
    relabeled = NdbBins(bins.centroids[perm], bins.train_counts[perm], bins.n_train)
    rep2 = ndb_from_bins(relabeled, gen, 0.05)
    assert rep2.ndb_score == rep.ndb_score
    assert sorted(rep2.z) == sorted(rep.z)


def test_ndb_input_errors():
    with pytest.raises(DataError):
        ndb_score(np.zeros((0, 2)), np.zeros((5, 2)), 2)
    with pytest.raises(DataError):
        ndb_score(np.ones((5, 2)), np.zeros((0, 2)), 2)
