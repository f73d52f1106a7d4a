"""Desk-scale GAN with plain, mini-batch-discrimination and MC-MBGNN discriminator heads."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .errors import ParameterError
from .ndb import NdbBins, fit_bins, ndb_from_bins
from .rng import SeededRng
from .training import Adam

HEADS = ("plain", "minibatch", "mc_mbgnn")


class GanDivergence(FloatingPointError):
    """Raised when a GAN loss becomes non-finite."""


@dataclass(frozen=True)
class McMbgnnSpec:
    """Aggregated edge features over the complete batch graph.

    ``phi`` is ``"mlp"`` (LeakyReLU hidden layer, ``phi_out`` outputs) or the
    fixed ``"exp_neg_l1"`` map ``v -> exp(-sum(v))``. ``psi`` is ``"absdiff"``
    or ``"concat"``. ``reduce`` is ``"sum"`` over all batch partners or
    ``"mean"``, which divides by the batch size so the feature scale does not
    grow with B.
    """

    heads: int = 4
    dim: int = 8
    psi: str = "absdiff"
    phi: str = "mlp"
    phi_hidden: int = 16
    phi_out: int = 1
    reduce: str = "sum"

    def __post_init__(self):
        if self.reduce not in ("sum", "mean"):
            raise ParameterError(f"unknown reduce {self.reduce!r}")
        if self.psi not in ("absdiff", "concat"):
            raise ParameterError(f"unknown psi {self.psi!r}")
        if self.phi not in ("mlp", "exp_neg_l1"):
            raise ParameterError(f"unknown phi {self.phi!r}")
        if self.phi == "exp_neg_l1" and self.psi != "absdiff":
            raise ParameterError("the fixed exp(-L1) scorer expects absolute differences")

    @property
    def aggregate_width(self) -> int:
        return self.heads * (1 if self.phi == "exp_neg_l1" else self.phi_out)


@dataclass(frozen=True)
class MinibatchSpec:
    kernels: int = 4
    kernel_dim: int = 8


@dataclass(frozen=True)
class GanSpec:
    noise_dim: int = 8
    data_dim: int = 2
    gen_hidden: int = 64
    disc_hidden: int = 64
    head: str = "plain"
    mc: McMbgnnSpec = McMbgnnSpec()
    minibatch: MinibatchSpec = MinibatchSpec()

    def __post_init__(self):
        if self.head not in HEADS:
            raise ParameterError(f"unknown discriminator head {self.head!r}")

    @property
    def head_input_width(self) -> int:
        extra = {"plain": 0, "minibatch": self.minibatch.kernels, "mc_mbgnn": self.mc.aggregate_width}
        return self.disc_hidden + extra[self.head]


# ------------------------------------------------------------------ parameters


def _normal(rng: SeededRng, fan_in: int, fan_out: int, gain: float = 2.0) -> np.ndarray:
    return rng.normal((fan_in, fan_out), math.sqrt(gain / fan_in))


def init_generator(spec: GanSpec, rng: SeededRng) -> dict[str, np.ndarray]:
    h = spec.gen_hidden
    return {
        "g.0.w": _normal(rng, spec.noise_dim, h),
        "g.0.b": np.zeros(h),
        "g.1.w": _normal(rng, h, h),
        "g.1.b": np.zeros(h),
        "g.2.w": _normal(rng, h, spec.data_dim, 1.0),
        "g.2.b": np.zeros(spec.data_dim),
    }


def init_mc_mbgnn(spec: McMbgnnSpec, d_in: int, rng: SeededRng) -> dict[str, np.ndarray]:
    p = {f"mc.{n}.w": _normal(rng, d_in, spec.dim, 1.0) for n in range(spec.heads)}
    if spec.phi == "mlp":
        width = spec.dim if spec.psi == "absdiff" else 2 * spec.dim
        p["mc.phi.w1"] = _normal(rng, width, spec.phi_hidden)
        p["mc.phi.b1"] = np.zeros(spec.phi_hidden)
        p["mc.phi.w2"] = _normal(rng, spec.phi_hidden, spec.phi_out, 1.0)
        p["mc.phi.b2"] = np.zeros(spec.phi_out)
    return p


def init_discriminator(spec: GanSpec, rng: SeededRng) -> dict[str, np.ndarray]:
    h = spec.disc_hidden
    p = {
        "d.0.w": _normal(rng, spec.data_dim, h),
        "d.0.b": np.zeros(h),
        "d.1.w": _normal(rng, h, h),
        "d.1.b": np.zeros(h),
    }
    if spec.head == "minibatch":
        mb = spec.minibatch
        p["mbd.t"] = rng.normal((h, mb.kernels * mb.kernel_dim), 0.1)
    elif spec.head == "mc_mbgnn":
        p.update(init_mc_mbgnn(spec.mc, h, rng))
    p["final.w"] = _normal(rng, spec.head_input_width, 1, 1.0)
    p["final.b"] = np.zeros(1)
    return p


def _vars(params: dict[str, np.ndarray], tape: ad.Tape | None) -> dict[str, ad.Var]:
    if tape is None:
        return {k: ad.const(v) for k, v in params.items()}
    return {k: tape.leaf(v, k) for k, v in params.items()}


# --------------------------------------------------------------------- layers


def mc_mbgnn_aggregate_var(spec: McMbgnnSpec, h: ad.Var, p: dict[str, ad.Var]) -> ad.Var:
    """Per-sample aggregated edge features, heads concatenated: (B, aggregate_width).

    Head n sums (or averages) phi(psi(W_n h_i, W_n h_j)) over every j in the
    batch, j = i included.
    """
    b = h.shape[0]
    feats = []
    for n in range(spec.heads):
        hw = ad.matmul(h, p[f"mc.{n}.w"])
        d = hw.shape[1]
        left = ad.reshape(hw, (b, 1, d))
        right = ad.reshape(hw, (1, b, d))
        if spec.psi == "absdiff":
            edge = ad.absolute(ad.sub(left, right))
        else:
            ones = np.ones((1, b, 1)), np.ones((b, 1, 1))
            edge = ad.concat([ad.mul(left, ones[0]), ad.mul(right, ones[1])], axis=2)
        edge = ad.reshape(edge, (b * b, edge.shape[2]))
        if spec.phi == "exp_neg_l1":
            scored = ad.exp(ad.scale(ad.sum_(edge, axis=1, keepdims=True), -1.0))
        else:
            hidden = ad.leaky_relu(ad.add(ad.matmul(edge, p["mc.phi.w1"]), p["mc.phi.b1"]), 0.2)
            scored = ad.add(ad.matmul(hidden, p["mc.phi.w2"]), p["mc.phi.b2"])
        out = scored.shape[1]
        agg = ad.sum_(ad.reshape(scored, (b, b, out)), axis=1)
        feats.append(ad.scale(agg, 1.0 / b) if spec.reduce == "mean" else agg)
    return feats[0] if len(feats) == 1 else ad.concat(feats, axis=1)


def minibatch_features_var(spec: MinibatchSpec, h: ad.Var, t: ad.Var) -> ad.Var:
    """Classic mini-batch discrimination: o[i, a] = sum_j exp(-||M[i, a] - M[j, a]||_1)."""
    b = h.shape[0]
    m = ad.reshape(ad.matmul(h, t), (b, spec.kernels, spec.kernel_dim))
    diff = ad.sub(ad.reshape(m, (b, 1, spec.kernels, spec.kernel_dim)), ad.reshape(m, (1, b, spec.kernels, spec.kernel_dim)))
    l1 = ad.sum_(ad.absolute(diff), axis=3)
    return ad.sum_(ad.exp(ad.scale(l1, -1.0)), axis=1)


def head_logits_var(spec: GanSpec, h: ad.Var, p: dict[str, ad.Var]) -> ad.Var:
    if spec.head == "minibatch":
        h = ad.concat([h, minibatch_features_var(spec.minibatch, h, p["mbd.t"])], axis=1)
    elif spec.head == "mc_mbgnn":
        h = ad.concat([h, mc_mbgnn_aggregate_var(spec.mc, h, p)], axis=1)
    return ad.add(ad.matmul(h, p["final.w"]), p["final.b"])


def disc_features_var(x: ad.Var, p: dict[str, ad.Var]) -> ad.Var:
    h = ad.leaky_relu(ad.add(ad.matmul(x, p["d.0.w"]), p["d.0.b"]), 0.2)
    return ad.leaky_relu(ad.add(ad.matmul(h, p["d.1.w"]), p["d.1.b"]), 0.2)


def disc_logits_var(spec: GanSpec, x: ad.Var, p: dict[str, ad.Var]) -> ad.Var:
    return head_logits_var(spec, disc_features_var(x, p), p)


def generator_var(z: ad.Var, p: dict[str, ad.Var]) -> ad.Var:
    h = ad.relu(ad.add(ad.matmul(z, p["g.0.w"]), p["g.0.b"]))
    h = ad.relu(ad.add(ad.matmul(h, p["g.1.w"]), p["g.1.b"]))
    return ad.add(ad.matmul(h, p["g.2.w"]), p["g.2.b"])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def mc_mbgnn_forward(spec: McMbgnnSpec, params: dict[str, np.ndarray], h_batch: np.ndarray) -> np.ndarray:
    """Scores ``sigmoid(W_final (h_i || aggregated_i) + b)`` in (0, 1) for one batch.

    Real and generated batches must be passed in separate calls.
    """
    p = _vars(params, None)
    h = ad.const(np.asarray(h_batch, dtype=np.float64))
    agg = mc_mbgnn_aggregate_var(spec, h, p)
    logits = ad.matmul(ad.concat([h, agg], axis=1), p["final.w"])
    if "final.b" in p:
        logits = ad.add(logits, p["final.b"])
    return _sigmoid(logits.value[:, 0])


def minibatch_discrimination_forward(
    spec: MinibatchSpec, t: np.ndarray, w_final: np.ndarray, b_final: np.ndarray, h_batch: np.ndarray
) -> np.ndarray:
    h = ad.const(np.asarray(h_batch, dtype=np.float64))
    feats = minibatch_features_var(spec, h, ad.const(t))
    logits = ad.matmul(ad.concat([h, feats], axis=1), ad.const(w_final)).value + b_final
    return _sigmoid(logits[:, 0])


# -------------------------------------------------------------------- training


@dataclass
class GanConfig:
    iterations: int = 3000
    batch_size: int = 128
    lr_d: float = 1e-4
    lr_g: float = 2e-4
    beta1: float = 0.5
    eval_every: int = 250
    eval_samples: int = 2000
    ndb_bins: int = 20
    significance: float = 0.05
    # "linear" anneals both learning rates to zero by the last iteration
    lr_decay: str = "none"

    def __post_init__(self):
        if self.lr_decay not in ("none", "linear"):
            raise ParameterError(f"unknown lr_decay {self.lr_decay!r}")


@dataclass
class GanRun:
    spec: GanSpec
    gen: dict[str, np.ndarray]
    disc: dict[str, np.ndarray]
    trajectory: list[tuple[int, float]] = field(default_factory=list)
    reports: list = field(default_factory=list)
    losses: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def final_ndb(self) -> float:
        return self.trajectory[-1][1]


def generate(gen: dict[str, np.ndarray], z: np.ndarray) -> np.ndarray:
    return generator_var(ad.const(z), _vars(gen, None)).value


def train_gan(
    spec: GanSpec,
    config: GanConfig,
    data_sampler: Callable[[SeededRng, int], np.ndarray],
    train_samples: np.ndarray,
    rng: SeededRng,
    bins: NdbBins | None = None,
) -> GanRun:
    """Alternating non-saturating GAN updates with periodic NDB evaluation.

    Real and generated batches go through the discriminator separately, so
    batch-level heads only ever compare samples of one kind. NDB is measured
    at iteration 0 and every ``eval_every`` iterations against ``bins`` (fitted
    on ``train_samples`` when not supplied).
    """
    init_rng = rng.stream("init")
    gen = init_generator(spec, init_rng)
    disc = init_discriminator(spec, init_rng)
    opt_d = Adam(config.lr_d, beta1=config.beta1)
    opt_g = Adam(config.lr_g, beta1=config.beta1)
    data_rng = rng.stream("data")
    noise_rng = rng.stream("noise")
    eval_z = rng.stream("eval").normal((config.eval_samples, spec.noise_dim))
    if bins is None:
        bins = fit_bins(train_samples, config.ndb_bins, rng.stream("bins"))
    run = GanRun(spec, gen, disc)
    b = config.batch_size

    def evaluate(step: int) -> None:
        report = ndb_from_bins(bins, generate(gen, eval_z), config.significance)
        run.trajectory.append((step, report.ndb_score))
        run.reports.append(report)

    evaluate(0)
    for it in range(1, config.iterations + 1):
        real = data_sampler(data_rng, b)
        fake = generate(gen, noise_rng.normal((b, spec.noise_dim)))
        tape = ad.Tape()
        pd = _vars(disc, tape)
        d_loss = ad.add(
            ad.bce_with_logits(disc_logits_var(spec, ad.const(real), pd), 1.0),
            ad.bce_with_logits(disc_logits_var(spec, ad.const(fake), pd), 0.0),
        )
        grads_d = tape.backward(d_loss)
        tape = ad.Tape()
        pg = _vars(gen, tape)
        fake_var = generator_var(ad.const(noise_rng.normal((b, spec.noise_dim))), pg)
        g_loss = ad.bce_with_logits(disc_logits_var(spec, fake_var, _vars(disc, None)), 1.0)
        grads_g = tape.backward(g_loss)
        dl, gl = float(d_loss.value), float(g_loss.value)
        if not (math.isfinite(dl) and math.isfinite(gl)):
            raise GanDivergence(f"non-finite loss at iteration {it}: d={dl}, g={gl}")
        if config.lr_decay == "linear":
            frac = 1.0 - (it - 1) / config.iterations
            opt_d.lr, opt_g.lr = config.lr_d * frac, config.lr_g * frac
        opt_d.step(disc, grads_d)
        opt_g.step(gen, grads_g)
        if it % config.eval_every == 0 or it == config.iterations:
            run.losses.append((it, dl, gl))
            if run.trajectory[-1][0] != it:
                evaluate(it)
    return run


def ring_sampler(modes: int = 8, radius: float = 2.0, std: float = 0.05) -> Callable[[SeededRng, int], np.ndarray]:
    def sample(rng: SeededRng, n: int) -> np.ndarray:
        labels = rng.integers(modes, n)
        angle = 2.0 * np.pi * labels / modes
        centers = radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        return centers + rng.normal((n, 2), std)

    return sample
