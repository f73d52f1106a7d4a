"""Encoder + stacked mini-batch GNN layers + concatenated-logits head."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import DataError, ParameterError, ShapeError
from .graph import BatchGraph, attention_neighbor_mean_var, attention_weights_var, neighbor_mean_var, topk_graph
from .rng import SeededRng
from .tensor_core import as_matrix, read_mbgt, write_mbgt

COMBINE_KINDS = ("concat", "weighted_add", "dropfeat")


@dataclass(frozen=True)
class CombineMode:
    """How self and neighbor features are merged.

    ``value`` is alpha for ``weighted_add`` and p for ``dropfeat``.
    """

    kind: str
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in COMBINE_KINDS:
            raise ParameterError(f"unknown combine mode {self.kind!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ParameterError(f"{self.kind} parameter must lie in [0, 1], got {self.value}")

    @classmethod
    def concat(cls) -> "CombineMode":
        return cls("concat")

    @classmethod
    def weighted_add(cls, alpha: float) -> "CombineMode":
        return cls("weighted_add", alpha)

    @classmethod
    def dropfeat(cls, p: float) -> "CombineMode":
        return cls("dropfeat", p)

    def __str__(self) -> str:
        return "concat" if self.kind == "concat" else f"{self.kind}({self.value:g})"


@dataclass(frozen=True)
class EncoderSpec:
    """Identity, MLP (ReLU after every layer) or TinyConv.

    TinyConv expects rows flattened from (C, H, W) images and runs two stages
    of 3x3 same-padded conv, ReLU and 2x2 average pooling.
    """

    kind: str
    input_dim: int
    widths: tuple[int, ...] = ()
    image_shape: tuple[int, int, int] | None = None
    channels: tuple[int, int] = (4, 8)

    def __post_init__(self):
        if self.kind not in ("identity", "mlp", "tinyconv"):
            raise ParameterError(f"unknown encoder {self.kind!r}")
        if self.kind == "tinyconv":
            if self.image_shape is None:
                raise ParameterError("tinyconv encoder needs image_shape")
            c, h, w = self.image_shape
            if c * h * w != self.input_dim:
                raise ShapeError(f"image_shape {self.image_shape} does not match input_dim {self.input_dim}")
            if h % 4 or w % 4:
                raise ShapeError("tinyconv needs height and width divisible by 4")

    @property
    def output_dim(self) -> int:
        if self.kind == "identity":
            return self.input_dim
        if self.kind == "mlp":
            return self.widths[-1] if self.widths else self.input_dim
        _, h, w = self.image_shape
        return (h // 4) * (w // 4) * self.channels[1]


@dataclass(frozen=True)
class LayerSpec:
    width: int
    mode: CombineMode

    @property
    def output_width(self) -> int:
        return 2 * self.width if self.mode.kind == "concat" else self.width


@dataclass(frozen=True)
class ModelSpec:
    """``heads == 0`` gives plain MBGNN layers, ``heads >= 1`` Attn-MBGNN."""

    encoder: EncoderSpec
    layers: tuple[LayerSpec, ...]
    k: int
    classes: int
    heads: int = 0
    attention_dim: int = 16
    attention_hidden: int | None = None

    def __post_init__(self):
        if not self.layers:
            raise ParameterError("a model needs at least one graph layer")
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if self.classes < 2:
            raise ParameterError("need at least two classes")

    @property
    def head_input_width(self) -> int:
        return sum(layer.output_width for layer in self.layers)

    def layer_input_widths(self) -> list[int]:
        widths = [self.encoder.output_dim]
        for layer in self.layers[:-1]:
            widths.append(layer.output_width)
        return widths

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        enc = dict(d["encoder"])
        enc["widths"] = tuple(enc.get("widths", ()))
        enc["channels"] = tuple(enc.get("channels", (4, 8)))
        if enc.get("image_shape") is not None:
            enc["image_shape"] = tuple(enc["image_shape"])
        layers = tuple(LayerSpec(l["width"], CombineMode(**l["mode"])) for l in d["layers"])
        rest = {k: v for k, v in d.items() if k not in ("encoder", "layers")}
        return cls(encoder=EncoderSpec(**enc), layers=layers, **rest)


@dataclass(frozen=True)
class Phase:
    training: bool
    rng: SeededRng | None = field(default=None, compare=False)


EVAL = Phase(False)


def train_phase(rng: SeededRng) -> Phase:
    return Phase(True, rng)


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, np.ndarray]

    def copy(self) -> "Model":
        return Model(self.spec, {k: v.copy() for k, v in self.params.items()})


@dataclass
class ForwardResult:
    logits: ad.Var
    per_layer: list[ad.Var]
    graphs: list[BatchGraph]
    embeddings: ad.Var


# ------------------------------------------------------------------ parameters


def _he(rng: SeededRng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal((fan_in, fan_out), np.sqrt(2.0 / fan_in))


def init_model(spec: ModelSpec, rng: SeededRng) -> Model:
    p: dict[str, np.ndarray] = {}
    enc = spec.encoder
    if enc.kind == "mlp":
        d = enc.input_dim
        for i, w in enumerate(enc.widths):
            p[f"enc.{i}.w"] = _he(rng, d, w)
            p[f"enc.{i}.b"] = np.zeros(w)
            d = w
    elif enc.kind == "tinyconv":
        c_in = enc.image_shape[0]
        for i, c_out in enumerate(enc.channels):
            p[f"conv.{i}.w"] = _he(rng, 9 * c_in, c_out)
            p[f"conv.{i}.b"] = np.zeros(c_out)
            c_in = c_out
    for i, (layer, d_in) in enumerate(zip(spec.layers, spec.layer_input_widths())):
        p[f"layer.{i}.w"] = _he(rng, d_in, layer.width)
        p[f"layer.{i}.b"] = np.zeros(layer.width)
        if spec.heads:
            d_attn = spec.attention_dim
            hidden = spec.attention_hidden or d_attn
            for n in range(spec.heads):
                p[f"layer.{i}.attn.{n}.w"] = rng.normal((d_in, d_attn), np.sqrt(1.0 / d_in))
            p[f"layer.{i}.phi.w1"] = _he(rng, d_attn, hidden)
            p[f"layer.{i}.phi.b1"] = np.zeros(hidden)
            p[f"layer.{i}.phi.w2"] = rng.normal((hidden, 1), np.sqrt(1.0 / hidden))
            p[f"layer.{i}.phi.b2"] = np.zeros(1)
    p["final.w"] = rng.normal((spec.head_input_width, spec.classes), np.sqrt(1.0 / spec.head_input_width))
    return Model(spec, p)


def param_vars(model: Model, tape: ad.Tape | None = None) -> dict[str, ad.Var]:
    if tape is None:
        return {name: ad.const(v) for name, v in model.params.items()}
    return {name: tape.leaf(v, name) for name, v in model.params.items()}


# --------------------------------------------------------------------- encoder


def _conv_index(height: int, width: int, channels: int) -> np.ndarray:
    """im2col gather index into (H, W, C)-flattened rows; -1 marks zero padding."""
    idx = np.full((height, width, 3, 3, channels), -1, dtype=np.int64)
    for y in range(height):
        for x in range(width):
            for dy in range(3):
                for dx in range(3):
                    yy, xx = y + dy - 1, x + dx - 1
                    if 0 <= yy < height and 0 <= xx < width:
                        base = (yy * width + xx) * channels
                        idx[y, x, dy, dx] = np.arange(base, base + channels)
    return idx.reshape(-1)


def _conv_stage(h: ad.Var, w: ad.Var, b: ad.Var, height: int, width: int, channels: int) -> ad.Var:
    batch = h.shape[0]
    cols = ad.take_cols_padded(h, _conv_index(height, width, channels))
    cols = ad.reshape(cols, (batch * height * width, 9 * channels))
    out = ad.relu(ad.add(ad.matmul(cols, w), b))
    c_out = w.shape[1]
    out = ad.reshape(out, (batch, height * width * c_out))
    return ad.avg_pool2x2(out, height, width, c_out)


def encode_var(spec: EncoderSpec, x: ad.Var, p: dict[str, ad.Var]) -> ad.Var:
    if x.shape[1] != spec.input_dim:
        raise ShapeError(f"encoder expects {spec.input_dim} input features, got {x.shape[1]}")
    if spec.kind == "identity":
        return x
    if spec.kind == "mlp":
        h = x
        for i in range(len(spec.widths)):
            h = ad.relu(ad.add(ad.matmul(h, p[f"enc.{i}.w"]), p[f"enc.{i}.b"]))
        return h
    c, height, width = spec.image_shape
    # CHW rows -> HWC rows
    hwc = np.arange(c * height * width).reshape(c, height, width).transpose(1, 2, 0).reshape(-1)
    h = ad.take_cols_padded(x, hwc)
    for i, _ in enumerate(spec.channels):
        h = _conv_stage(h, p[f"conv.{i}.w"], p[f"conv.{i}.b"], height, width, c)
        c = p[f"conv.{i}.w"].shape[1]
        height, width = height // 2, width // 2
    return h


def encode(model: Model, x_batch: np.ndarray) -> np.ndarray:
    """Embeddings H^(0) of a batch of flattened inputs."""
    x = as_matrix(x_batch, "x_batch")
    return encode_var(model.spec.encoder, ad.const(x), param_vars(model)).value


# ---------------------------------------------------------------------- layers


def combine_var(mode: CombineMode, f_self: ad.Var, f_neigh: ad.Var, phase: Phase) -> ad.Var:
    """Pre-nonlinearity combination of self and neighbor features."""
    if mode.kind == "concat":
        return ad.concat([f_self, f_neigh], axis=1)
    if mode.kind == "weighted_add":
        return ad.add(ad.scale(f_self, mode.value), ad.scale(f_neigh, 1.0 - mode.value))
    if phase.training:
        if phase.rng is None:
            raise ParameterError("training phase needs an rng for dropfeat")
        # one coin per node: heads keeps self, tails keeps neighbors
        keep_self = phase.rng.bernoulli(mode.value, (f_self.shape[0], 1)).astype(np.float64)
        return ad.add(ad.mul(f_self, keep_self), ad.mul(f_neigh, 1.0 - keep_self))
    return ad.add(ad.scale(f_self, mode.value), ad.scale(f_neigh, 1.0 - mode.value))


def layer_pre_activation_var(
    spec: ModelSpec, index: int, h: ad.Var, g: BatchGraph, phase: Phase, p: dict[str, ad.Var]
) -> tuple[ad.Var, BatchGraph]:
    layer = spec.layers[index]
    hbar = ad.add(ad.matmul(h, p[f"layer.{index}.w"]), p[f"layer.{index}.b"])
    if spec.heads:
        attn = {
            "transforms": [p[f"layer.{index}.attn.{n}.w"] for n in range(spec.heads)],
            "phi_w1": p[f"layer.{index}.phi.w1"],
            "phi_b1": p[f"layer.{index}.phi.b1"],
            "phi_w2": p[f"layer.{index}.phi.w2"],
            "phi_b2": p[f"layer.{index}.phi.b2"],
        }
        weights = attention_weights_var(h, g, attn)
        f_neigh = attention_neighbor_mean_var(g, weights, hbar)
        g = BatchGraph(g.neighbors, np.stack([w.value for w in weights]))
    else:
        f_neigh = neighbor_mean_var(g, hbar)
    return combine_var(layer.mode, hbar, f_neigh, phase), g


def layer_forward(
    model: Model, index: int, h: np.ndarray, g: BatchGraph, phase: Phase = EVAL
) -> np.ndarray:
    """Output of graph layer ``index`` for layer input ``h`` on graph ``g``."""
    pre, _ = layer_pre_activation_var(model.spec, index, ad.const(as_matrix(h, "h")), g, phase, param_vars(model))
    return ad.relu(pre).value


# --------------------------------------------------------------------- forward


def forward_var(
    model: Model,
    x_batch: np.ndarray,
    phase: Phase = EVAL,
    *,
    tape: ad.Tape | None = None,
    graphs: list[BatchGraph] | None = None,
) -> ForwardResult:
    """Full forward pass; ``graphs`` freezes the per-layer neighborhoods."""
    spec = model.spec
    x = as_matrix(x_batch, "x_batch")
    if x.shape[0] <= spec.k:
        raise ParameterError(f"batch of {x.shape[0]} cannot give every node k={spec.k} neighbors")
    p = param_vars(model, tape)
    h = encode_var(spec.encoder, ad.const(x), p)
    embeddings = h
    outputs, used = [], []
    for i in range(len(spec.layers)):
        g = graphs[i] if graphs is not None else topk_graph(h.value, spec.k)
        pre, g = layer_pre_activation_var(spec, i, h, g, phase, p)
        h = ad.relu(pre)
        outputs.append(h)
        used.append(g)
    joined = outputs[0] if len(outputs) == 1 else ad.concat(outputs, axis=1)
    logits = ad.matmul(joined, p["final.w"])
    return ForwardResult(logits, outputs, used, embeddings)


def forward(model: Model, x_batch: np.ndarray, phase: Phase = EVAL) -> tuple[np.ndarray, list[np.ndarray]]:
    res = forward_var(model, x_batch, phase)
    return res.logits.value, [h.value for h in res.per_layer]


def check_labels(labels, classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise DataError("labels must be a 1-D integer array")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise DataError(f"labels must lie in [0, {classes})")
    return y.astype(np.int64)


def cross_entropy_loss(logits: np.ndarray, labels) -> float:
    logits = as_matrix(logits, "logits")
    y = check_labels(labels, logits.shape[1])
    if len(y) != logits.shape[0]:
        raise ShapeError("one label per logit row required")
    return float(ad.softmax_cross_entropy(ad.const(logits), y).value)


# ------------------------------------------------------------------ prediction


def predict_inductive(model: Model, x_batch: np.ndarray) -> np.ndarray:
    logits, _ = forward(model, x_batch, EVAL)
    return np.argmax(logits, axis=1)


def transductive_batch(x_test: np.ndarray, train_pool: np.ndarray, batch_size: int, rng: SeededRng) -> np.ndarray:
    """One test row followed by ``batch_size - 1`` distinct pool rows."""
    pool = as_matrix(train_pool, "train_pool")
    if len(pool) < batch_size - 1:
        raise DataError(f"pool of {len(pool)} rows cannot fill a batch of {batch_size}")
    picks = rng.choice(len(pool), batch_size - 1)
    return np.vstack([np.asarray(x_test, dtype=np.float64).reshape(1, -1), pool[picks]])


def transductive_logits(model: Model, x_test: np.ndarray, context: np.ndarray) -> np.ndarray:
    """Logits of ``x_test`` classified inside a batch with the ``context`` rows."""
    batch = np.vstack([np.asarray(x_test, dtype=np.float64).reshape(1, -1), context])
    logits, _ = forward(model, batch, EVAL)
    return logits[0]


def predict_transductive(
    model: Model, x_test: np.ndarray, train_pool: np.ndarray, rng: SeededRng, batch_size: int
) -> int:
    batch = transductive_batch(x_test, train_pool, batch_size, rng)
    logits, _ = forward(model, batch, EVAL)
    return int(np.argmax(logits[0]))


def baseline_spec(spec: ModelSpec) -> ModelSpec:
    """Same architecture with graph aggregation switched off (alpha = 1).

    The graph layer then reduces to a plain dense ReLU layer, so the result is
    an encoder + fully connected classifier of identical capacity.
    """
    layers = tuple(LayerSpec(l.width, CombineMode.weighted_add(1.0)) for l in spec.layers)
    return replace(spec, layers=layers, heads=0)


# ------------------------------------------------------------------ checkpoint


def save_checkpoint(model: Model, directory) -> None:
    """Directory of MBGT tensors plus ``manifest.txt``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"spec = {json.dumps(model.spec.to_dict(), sort_keys=True)}"]
    for name in sorted(model.params):
        value = model.params[name]
        fname = f"{name}.mbgt"
        write_mbgt(out / fname, value)
        shape = "x".join(str(s) for s in value.shape)
        lines.append(f"tensor {name} {shape} {fname}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(directory) -> Model:
    src = Path(directory)
    spec = None
    params = {}
    for line in (src / "manifest.txt").read_text(encoding="utf-8").splitlines():
        if line.startswith("spec = "):
            spec = ModelSpec.from_dict(json.loads(line[len("spec = "):]))
        elif line.startswith("tensor "):
            _, name, shape, fname = line.split()
            value = read_mbgt(src / fname).astype(np.float64)
            expected = tuple(int(s) for s in shape.split("x"))
            if value.shape != expected:
                raise DataError(f"{fname}: shape {value.shape} != manifest {expected}")
            params[name] = value
    if spec is None:
        raise DataError(f"{src}/manifest.txt has no spec line")
    return Model(spec, params)
