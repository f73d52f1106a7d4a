import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbgnn.errors import ParameterError
from mbgnn.graph import (
    BatchGraph,
    attention_neighbor_mean,
    attention_weights,
    init_attention_params,
    neighbor_mean,
    topk_graph,
)
from mbgnn.rng import SeededRng

from oracles import brute_force_topk, dense_adjacency, per_edge_attention

seeds = st.integers(0, 2**63)


def test_topk_matches_full_sort_oracle():
    h = SeededRng(0).normal((6, 4))
    g = topk_graph(h, 3)
    assert np.array_equal(g.neighbors, brute_force_topk(h, 3))


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 12), st.data())
def test_topk_oracle_property(seed, b, data):
    k = data.draw(st.integers(1, b - 1))
    h = SeededRng(seed).normal((b, 3))
    g = topk_graph(h, k)
    assert np.array_equal(g.neighbors, brute_force_topk(h, k))
    assert not np.any(g.neighbors == np.arange(b)[:, None])


def test_topk_ties_go_to_lower_index():
    h = np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    g = topk_graph(h, 2)
    assert g.neighbors[0].tolist() == [1, 2]
    assert g.neighbors[3].tolist() == [0, 1]


def test_topk_rejects_bad_k():
    h = np.ones((4, 2))
    for k in (0, 4):
        with pytest.raises(ParameterError):
            topk_graph(h, k)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_topk_invariant_to_positive_row_scaling(seed):
    r = SeededRng(seed)
    h = r.normal((10, 4))
    d = np.exp(r.normal((10, 1)))
    assert np.array_equal(topk_graph(h, 3).neighbors, topk_graph(d * h, 3).neighbors)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_topk_permutation_equivariance(seed):
    r = SeededRng(seed)
    h = r.normal((9, 3))
    perm = r.permutation(9)
    a = topk_graph(h[perm], 4)
    b = topk_graph(h, 4).permuted(perm)
    assert np.array_equal(a.neighbors, b.neighbors)


def test_neighbor_mean_matches_dense_adjacency():
    r = SeededRng(1)
    h, hbar = r.normal((7, 3)), r.normal((7, 5))
    g = topk_graph(h, 3)
    a = dense_adjacency(g.neighbors, 7)
    assert np.array_equal(a, g.dense_adjacency())
    np.testing.assert_allclose(neighbor_mean(g, hbar), a @ hbar / 3, atol=1e-12, rtol=0)


def test_attention_matches_per_edge_oracle():
    r = SeededRng(2)
    h = r.normal((4, 3))
    params = init_attention_params(r.stream("attn"), 3, 5, heads=2, hidden=6)
    params.phi_b1 = r.normal(6, 0.3)
    params.phi_b2 = r.normal(1, 0.3)
    g = attention_weights(h, topk_graph(h, 2), params)
    expected = per_edge_attention(
        h, g.neighbors, params.transforms, params.phi_w1, params.phi_b1, params.phi_w2, params.phi_b2
    )
    for head in range(2):
        np.testing.assert_allclose(g.weights[head], expected[head], atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3))
def test_attention_rows_are_positive_distributions(seed, heads):
    r = SeededRng(seed)
    h = r.normal((8, 4))
    g = attention_weights(h, topk_graph(h, 3), init_attention_params(r, 4, 3, heads))
    assert g.weights.shape == (heads, 8, 3)
    assert np.all(g.weights > 0)
    np.testing.assert_allclose(g.weights.sum(axis=2), 1.0, atol=1e-12)


def test_attention_neighbor_mean_matches_dense_product():
    r = SeededRng(3)
    h, hbar = r.normal((6, 3)), r.normal((6, 4))
    g = attention_weights(h, topk_graph(h, 2), init_attention_params(r, 3, 4, heads=3))
    dense = sum(g.dense_adjacency(n) for n in range(3)) / 3
    np.testing.assert_allclose(attention_neighbor_mean(g, hbar), dense @ hbar, atol=1e-12, rtol=0)


def test_attention_mean_needs_weights():
    g = BatchGraph(np.array([[1], [0]]))
    with pytest.raises(ParameterError):
        attention_neighbor_mean(g, np.ones((2, 2)))
