"""Tape-based reverse-mode differentiation over numpy float64 arrays.

Each op computes its value eagerly. If any input is tracked by a tape, the
result is appended to that tape together with one vector-Jacobian product per
tracked input. ``Tape.backward`` walks the tape in reverse creation order,
which is a valid reverse topological order because inputs always exist before
the ops that consume them.

Untracked values (constants) never touch a tape, so running a forward pass on
constant parameters is a plain numpy evaluation.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor_core
from .errors import ContractError, ShapeError

Vjp = Callable[[np.ndarray], np.ndarray]


class Var:
    __slots__ = ("value", "tape", "parents", "name")

    def __init__(self, value, tape: "Tape | None" = None, parents=(), name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.parents: tuple[tuple[Var, Vjp], ...] = tuple(parents)
        self.name = name

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        tag = "tracked" if self.tracked else "const"
        return f"Var({self.name or ''} shape={self.shape}, {tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Records ops whose inputs include one of this tape's leaves."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []

    def leaf(self, value, name: str | None = None) -> Var:
        v = Var(np.array(value, dtype=np.float64), tape=self, name=name)
        self.leaves.append(v)
        return v

    def backward(self, loss: Var) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to every named leaf."""
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
        out = {}
        for leaf in self.leaves:
            if leaf.name is not None:
                out[leaf.name] = grads.get(id(leaf), np.zeros_like(leaf.value))
        return out


def const(value) -> Var:
    return value if isinstance(value, Var) else Var(value)


def _node(value: np.ndarray, parents: Sequence[tuple[Var, Vjp]]) -> Var:
    live = [(p, f) for p, f in parents if p.tracked]
    if not live:
        return Var(value)
    tape = live[0][0].tape
    out = Var(value, tape=tape, parents=live)
    tape.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Var:
    a, b = const(a), const(b)
    return _node(
        a.value + b.value,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a, b) -> Var:
    a, b = const(a), const(b)
    return _node(
        a.value - b.value,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: -_unbroadcast(g, b.shape))],
    )


def mul(a, b) -> Var:
    a, b = const(a), const(b)
    return _node(
        a.value * b.value,
        [
            (a, lambda g: _unbroadcast(g * b.value, a.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.shape)),
        ],
    )


def scale(a: Var, c: float) -> Var:
    return _node(a.value * c, [(a, lambda g: g * c)])


def relu_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return g * (x > 0)


def relu(a: Var) -> Var:
    x = a.value
    return _node(np.maximum(x, 0.0), [(a, lambda g: relu_grad(x, g))])


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    x = a.value
    factor = np.where(x > 0, 1.0, slope)
    return _node(x * factor, [(a, lambda g: g * factor)])


def absolute(a: Var) -> Var:
    x = a.value
    return _node(np.abs(x), [(a, lambda g: g * np.sign(x))])


def exp(a: Var) -> Var:
    y = np.exp(a.value)
    return _node(y, [(a, lambda g: g * y)])


def sigmoid(a: Var) -> Var:
    y = 1.0 / (1.0 + np.exp(-a.value))
    return _node(y, [(a, lambda g: g * y * (1.0 - y))])


# ------------------------------------------------------------------ reductions


def sum_(a: Var, axis=None, keepdims: bool = False) -> Var:
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _node(a.value.sum(axis=axis, keepdims=keepdims), [(a, vjp)])


def mean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


# -------------------------------------------------------------------- linear


def matmul(a, b) -> Var:
    a, b = const(a), const(b)
    av, bv = a.value, b.value
    return _node(
        tensor_core.matmul(av, bv),
        [
            (a, lambda g: tensor_core.matmul(g, bv.T)),
            (b, lambda g: tensor_core.matmul(av.T, g)),
        ],
    )


def concat(items: Sequence[Var], axis: int = -1) -> Var:
    items = [const(v) for v in items]
    value = np.concatenate([v.value for v in items], axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in items])
    parents = []
    for v, lo, hi in zip(items, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * value.ndim
        sl[axis] = slice(lo, hi)
        parents.append((v, lambda g, sl=tuple(sl): g[sl]))
    return _node(value, parents)


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return _node(a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def take_rows(a: Var, idx: np.ndarray) -> Var:
    """``a[idx]`` for an integer index array of any shape."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return _node(a.value[idx], [(a, vjp)])


def take_cols_padded(a: Var, idx: np.ndarray) -> Var:
    """``a[:, idx]`` where index ``-1`` reads an implicit zero column."""
    idx = np.asarray(idx, dtype=np.int64)
    rows, cols = a.shape
    padded = np.concatenate([a.value, np.zeros((rows, 1))], axis=1)
    safe = np.where(idx < 0, cols, idx)
    flat = safe.reshape(-1)

    def vjp(g):
        out = np.zeros((rows, cols + 1))
        np.add.at(out, (slice(None), flat), g.reshape(rows, -1))
        return out[:, :cols]

    return _node(padded[:, safe], [(a, vjp)])


def avg_pool2x2(a: Var, height: int, width: int, channels: int) -> Var:
    """2x2 average pooling on rows laid out as flattened (H, W, C)."""
    b = a.shape[0]
    if height % 2 or width % 2:
        raise ShapeError(f"avg_pool2x2 needs even spatial dims, got {height}x{width}")
    x = a.value.reshape(b, height // 2, 2, width // 2, 2, channels)
    y = x.mean(axis=(2, 4)).reshape(b, -1)

    def vjp(g):
        g6 = g.reshape(b, height // 2, 1, width // 2, 1, channels) * 0.25
        return np.broadcast_to(g6, x.shape).reshape(b, -1).copy()

    return _node(y, [(a, vjp)])


# -------------------------------------------------------------- softmax family


def softmax(a: Var, axis: int = -1) -> Var:
    y = tensor_core.row_softmax(np.moveaxis(a.value, axis, -1))
    y = np.moveaxis(y, -1, axis)

    def vjp(g):
        return y * (g - np.sum(g * y, axis=axis, keepdims=True))

    return _node(y, [(a, vjp)])


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Batch-mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    b = logits.shape[0]
    logp = log_softmax_rows(logits.value)
    loss = -logp[np.arange(b), labels].mean()

    def vjp(g):
        d = np.exp(logp)
        d[np.arange(b), labels] -= 1.0
        return g * d / b

    return _node(np.array(loss), [(logits, vjp)])


def bce_with_logits(logits: Var, target: float) -> Var:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a constant target."""
    z = logits.value
    # log(1 + exp(-|z|)) + max(z, 0) - z * t
    loss = np.mean(np.logaddexp(0.0, z) - z * target)
    n = z.size

    def vjp(g):
        return g * (1.0 / (1.0 + np.exp(-z)) - target) / n

    return _node(np.array(loss), [(logits, vjp)])
