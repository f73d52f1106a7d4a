"""Mini-batch graph induction: top-k cosine neighborhoods and attention weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ParameterError, ShapeError
from .rng import SeededRng
from .tensor_core import as_matrix, cosine_similarity_matrix


@dataclass
class BatchGraph:
    """``neighbors[i]`` lists the k neighbor indices of node i.

    ``weights`` (heads, B, k) holds per-head edge weights aligned with
    ``neighbors`` when the graph carries attention.
    """

    neighbors: np.ndarray
    weights: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    def dense_adjacency(self, head: int | None = None) -> np.ndarray:
        """B x B adjacency; 0/1 entries, or the weights of ``head``."""
        b = self.batch_size
        a = np.zeros((b, b))
        rows = np.repeat(np.arange(b), self.k)
        vals = 1.0 if head is None else self.weights[head].reshape(-1)
        a[rows, self.neighbors.reshape(-1)] = vals
        return a

    def permuted(self, perm: np.ndarray) -> "BatchGraph":
        """Graph of the batch reordered so that new node i is old node perm[i]."""
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        nb = inv[self.neighbors[perm]]
        w = None if self.weights is None else self.weights[:, perm]
        return BatchGraph(nb, w)


@dataclass
class AttentionParams:
    """Per-head transforms plus one scorer network shared by all heads.

    The scorer maps a d'-vector to a scalar:
    ``leaky_relu(v @ phi_w1 + phi_b1, 0.2) @ phi_w2 + phi_b2``.
    """

    transforms: list[np.ndarray]
    phi_w1: np.ndarray
    phi_b1: np.ndarray
    phi_w2: np.ndarray
    phi_b2: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @property
    def heads(self) -> int:
        return len(self.transforms)


def init_attention_params(
    rng: SeededRng, d_in: int, d_attn: int, heads: int, hidden: int | None = None
) -> AttentionParams:
    hidden = hidden or d_attn
    return AttentionParams(
        transforms=[rng.normal((d_in, d_attn), np.sqrt(2.0 / d_in)) for _ in range(heads)],
        phi_w1=rng.normal((d_attn, hidden), np.sqrt(2.0 / d_attn)),
        phi_b1=np.zeros(hidden),
        phi_w2=rng.normal((hidden, 1), np.sqrt(1.0 / hidden)),
        phi_b2=np.zeros(1),
    )


def topk_graph(h: np.ndarray, k: int) -> BatchGraph:
    """Top-k cosine neighborhoods with self connections removed.

    Neighbors are ordered by similarity descending; ties go to the lower index.
    """
    h = as_matrix(h, "h")
    b = h.shape[0]
    if not 1 <= k <= b - 1:
        raise ParameterError(f"need 1 <= k <= B-1, got k={k}, B={b}")
    s = cosine_similarity_matrix(h)
    np.fill_diagonal(s, -np.inf)
    # stable sort of -s keeps lower indices first among equal similarities
    order = np.argsort(-s, axis=1, kind="stable")
    return BatchGraph(np.ascontiguousarray(order[:, :k]))


def neighbor_mean_var(g: BatchGraph, hbar: ad.Var) -> ad.Var:
    gathered = ad.take_rows(hbar, g.neighbors)
    return ad.scale(ad.sum_(gathered, axis=1), 1.0 / g.k)


def neighbor_mean(g: BatchGraph, hbar: np.ndarray) -> np.ndarray:
    """Row i is the mean of ``hbar`` over the neighbors of i."""
    return neighbor_mean_var(g, ad.const(as_matrix(hbar, "hbar"))).value


def phi_var(v: ad.Var, w1: ad.Var, b1: ad.Var, w2: ad.Var, b2: ad.Var) -> ad.Var:
    hidden = ad.leaky_relu(ad.add(ad.matmul(v, w1), b1), 0.2)
    return ad.add(ad.matmul(hidden, w2), b2)


def attention_weights_var(h: ad.Var, g: BatchGraph, params: dict) -> list[ad.Var]:
    """Per-head (B, k) softmax weights over each node's neighbors.

    ``params`` holds Vars under keys ``transforms`` (list), ``phi_w1``,
    ``phi_b1``, ``phi_w2``, ``phi_b2``.
    """
    b, k = g.neighbors.shape
    phi = (params["phi_w1"], params["phi_b1"], params["phi_w2"], params["phi_b2"])
    out = []
    for w in params["transforms"]:
        hw = ad.matmul(h, w)
        d = hw.shape[1]
        centre = ad.reshape(hw, (b, 1, d))
        diff = ad.absolute(ad.sub(centre, ad.take_rows(hw, g.neighbors)))
        scores = phi_var(ad.reshape(diff, (b * k, d)), *phi)
        out.append(ad.softmax(ad.reshape(scores, (b, k)), axis=1))
    return out


def attention_params_as_vars(p: AttentionParams) -> dict:
    return {
        "transforms": [ad.const(w) for w in p.transforms],
        "phi_w1": ad.const(p.phi_w1),
        "phi_b1": ad.const(p.phi_b1),
        "phi_w2": ad.const(p.phi_w2),
        "phi_b2": ad.const(p.phi_b2),
    }


def attention_weights(h: np.ndarray, g: BatchGraph, params: AttentionParams) -> BatchGraph:
    """Attach per-head attention weights to ``g`` (built from the same ``h``)."""
    h = as_matrix(h, "h")
    if h.shape[0] != g.batch_size:
        raise ShapeError("graph and embeddings disagree on batch size")
    heads = attention_weights_var(ad.const(h), g, attention_params_as_vars(params))
    return BatchGraph(g.neighbors.copy(), np.stack([w.value for w in heads]))


def attention_neighbor_mean_var(g: BatchGraph, weights: list[ad.Var], hbar: ad.Var) -> ad.Var:
    b, k = g.neighbors.shape
    gathered = ad.take_rows(hbar, g.neighbors)
    total = None
    for w in weights:
        term = ad.sum_(ad.mul(ad.reshape(w, (b, k, 1)), gathered), axis=1)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / len(weights))


def attention_neighbor_mean(g: BatchGraph, hbar: np.ndarray) -> np.ndarray:
    """Row i is the head-average of attention-weighted neighbor sums."""
    if g.weights is None:
        raise ParameterError("graph has no attention weights")
    weights = [ad.const(w) for w in g.weights]
    return attention_neighbor_mean_var(g, weights, ad.const(as_matrix(hbar, "hbar"))).value
