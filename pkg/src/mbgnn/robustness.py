"""Perturbation attenuation checks and corruption robustness curves."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import ParameterError, ShapeError
from .graph import BatchGraph, neighbor_mean_var, topk_graph
from .model import EVAL, CombineMode, Model, combine_var, encode
from .rng import SeededRng
from .tensor_core import as_matrix, matmul
from .training import accuracy_transductive

ATTENUATION_VARIANTS = ("gcn_self_loop", "weighted_add", "dropfeat_eval")


@dataclass(frozen=True)
class AttenuationVariant:
    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ATTENUATION_VARIANTS:
            raise ParameterError(f"unknown attenuation variant {self.kind!r}")

    def expected_ratio(self, k: int) -> float:
        return 1.0 / (k + 1) if self.kind == "gcn_self_loop" else self.value


@dataclass
class AttenuationReport:
    variant: str
    k: int
    node: int
    expected: float
    ratio: float
    delta_sup_norm: float
    delta_mbgnn_norm: float
    # descriptive only: graph rebuilt after perturbing, ReLU applied
    unfrozen_ratio: float
    neighbors_changed: bool

    @property
    def relative_error(self) -> float:
        return abs(self.ratio - self.expected) / self.expected


def _graph_logits(e: np.ndarray, w: np.ndarray, g: BatchGraph, variant: AttenuationVariant) -> np.ndarray:
    """Pre-nonlinearity graph-layer output for embeddings ``e`` and shared ``w``."""
    hbar = matmul(e, w)
    if variant.kind == "gcn_self_loop":
        k = g.k
        a = g.dense_adjacency() + np.eye(g.batch_size)
        return matmul(a, hbar) / (k + 1)
    mode = CombineMode.weighted_add(variant.value) if variant.kind == "weighted_add" else CombineMode.dropfeat(variant.value)
    hv = ad.const(hbar)
    return combine_var(mode, hv, neighbor_mean_var(g, hv), EVAL).value


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else math.nan


def verify_attenuation(
    encoder: Callable[[np.ndarray], np.ndarray],
    w: np.ndarray,
    batch: np.ndarray,
    k: int,
    delta_x: np.ndarray,
    variant: AttenuationVariant,
    node: int = -1,
) -> AttenuationReport:
    """Ratio of logit perturbations, graph model over plain model, for one perturbed node.

    Both models share ``w``; logits are compared before any nonlinearity and
    the neighborhoods computed on the clean batch are kept for the perturbed
    pass.
    """
    batch = as_matrix(batch, "batch")
    node = node % len(batch)
    perturbed = batch.copy()
    perturbed[node] += np.asarray(delta_x, dtype=np.float64)
    e0, e1 = encoder(batch), encoder(perturbed)
    g0 = topk_graph(e0, k)
    g1 = topk_graph(e1, k)

    dy_sup = (matmul(e1, w) - matmul(e0, w))[node]
    y0 = _graph_logits(e0, w, g0, variant)
    dy_graph = (_graph_logits(e1, w, g0, variant) - y0)[node]
    dy_unfrozen = (np.maximum(_graph_logits(e1, w, g1, variant), 0) - np.maximum(y0, 0))[node]
    dy_sup_relu = (np.maximum(matmul(e1, w), 0) - np.maximum(matmul(e0, w), 0))[node]

    sup_norm = float(np.linalg.norm(dy_sup))
    graph_norm = float(np.linalg.norm(dy_graph))
    return AttenuationReport(
        variant=variant.kind,
        k=k,
        node=node,
        expected=variant.expected_ratio(k),
        ratio=_ratio(graph_norm, sup_norm),
        delta_sup_norm=sup_norm,
        delta_mbgnn_norm=graph_norm,
        unfrozen_ratio=_ratio(float(np.linalg.norm(dy_unfrozen)), float(np.linalg.norm(dy_sup_relu))),
        neighbors_changed=bool(np.any(g0.neighbors != g1.neighbors)),
    )


def model_encoder(model: Model) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: encode(model, x)


# ------------------------------------------------------------------ corruption


@dataclass(frozen=True)
class Corruption:
    """``kind`` is ``"noise"`` (pixel Gaussian noise) or ``"blur"`` (Gaussian blur)."""

    kind: str
    sigma: float

    def __post_init__(self):
        if self.kind not in ("noise", "blur"):
            raise ParameterError(f"unknown corruption {self.kind!r}")
        if self.sigma < 0:
            raise ParameterError("corruption sigma must be >= 0")


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    with np.errstate(over="ignore"):
        # a tiny sigma overflows to exp(-inf) = 0, leaving a delta kernel
        k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def gaussian_kernel_2d(sigma: float) -> np.ndarray:
    k = gaussian_kernel_1d(sigma)
    return np.outer(k, k)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Blur a (C, H, W) image channel-wise with reflect padding."""
    if sigma == 0:
        return image.copy()
    k = gaussian_kernel_1d(sigma)
    r = len(k) // 2
    padded = np.pad(image, ((0, 0), (r, r), (r, r)), mode="reflect")
    _, h, w = image.shape
    # separable: along H, then along W
    tmp = sum(k[i] * padded[:, i : i + h, :] for i in range(len(k)))
    return sum(k[i] * tmp[:, :, i : i + w] for i in range(len(k)))


def corrupt(
    x: np.ndarray,
    corruption: Corruption,
    rng: SeededRng,
    image_shape: tuple[int, int, int] | None = None,
) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if corruption.kind == "noise":
        if corruption.sigma == 0:
            return x.copy()
        return x + rng.normal(x.shape, corruption.sigma)
    if image_shape is None:
        raise ShapeError("blur needs image (C, H, W) metadata")
    if int(np.prod(image_shape)) != x.size:
        raise ShapeError(f"row of {x.size} values does not match image shape {image_shape}")
    return gaussian_blur(x.reshape(image_shape), corruption.sigma).reshape(x.shape)


def robustness_curve(
    model: Model,
    x_test: np.ndarray,
    y_test: np.ndarray,
    train_pool: np.ndarray,
    kind: str,
    severities,
    rng: SeededRng,
    batch_size: int,
    image_shape: tuple[int, int, int] | None = None,
) -> list[tuple[float, float]]:
    """Transductive accuracy of corrupted test rows among clean pool rows.

    Every severity reuses the same context batches (stream ``context``) and
    the same noise stream, so severity 0 reproduces clean transductive accuracy.
    """
    out = []
    for sigma in severities:
        c = Corruption(kind, float(sigma))
        noise_rng = rng.stream("noise")
        corrupted = np.stack([corrupt(row, c, noise_rng, image_shape) for row in x_test])
        acc = accuracy_transductive(model, corrupted, y_test, train_pool, batch_size, rng.stream("context"))
        out.append((float(sigma), acc))
    return out
