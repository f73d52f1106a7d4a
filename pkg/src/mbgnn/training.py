"""Optimizers, the training loop, evaluation and finite-difference gradient checks."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError, ParameterError
from .graph import BatchGraph
from .model import EVAL, Model, Phase, check_labels, forward, forward_var, train_phase, transductive_batch
from .rng import SeededRng

HISTORY_FIELDS = ("epoch", "train_acc", "test_acc_inductive", "test_acc_transductive", "loss")


class Sgd:
    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if self.momentum:
                v = self.velocity.setdefault(name, np.zeros_like(g))
                v *= self.momentum
                v += g
                g = v
            params[name] -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float, momentum: float = 0.0):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return Sgd(lr, momentum)
    raise ParameterError(f"unknown optimizer {name!r}")


def loss_and_grads(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    phase: Phase = EVAL,
    graphs: list[BatchGraph] | None = None,
) -> tuple[float, dict[str, np.ndarray], list[BatchGraph]]:
    tape = ad.Tape()
    res = forward_var(model, x, phase, tape=tape, graphs=graphs)
    loss = ad.softmax_cross_entropy(res.logits, y)
    return float(loss.value), tape.backward(loss), res.graphs


def loss_value(model: Model, x: np.ndarray, y: np.ndarray, graphs: list[BatchGraph] | None = None) -> float:
    res = forward_var(model, x, EVAL, graphs=graphs)
    return float(ad.softmax_cross_entropy(res.logits, y).value)


# ------------------------------------------------------------------ evaluation


def accuracy_inductive(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int) -> float:
    """Accuracy over consecutive test batches.

    A short final chunk is classified inside the last ``batch_size`` rows so
    every prediction comes from a full-size graph.
    """
    n = len(x)
    if n == 0:
        raise DataError("empty evaluation set")
    b = min(batch_size, n)
    preds = np.empty(n, dtype=np.int64)
    for start in range(0, n, b):
        stop = min(start + b, n)
        lo = min(start, n - b)
        logits, _ = forward(model, x[lo:stop], EVAL)
        preds[start:stop] = np.argmax(logits, axis=1)[start - lo :]
    return float(np.mean(preds == y))


def accuracy_transductive(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    pool: np.ndarray,
    batch_size: int,
    rng: SeededRng,
) -> float:
    hits = 0
    for xi, yi in zip(x, y):
        batch = transductive_batch(xi, pool, batch_size, rng)
        logits, _ = forward(model, batch, EVAL)
        hits += int(np.argmax(logits[0]) == yi)
    return hits / len(x)


# -------------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)

    def history_csv(self) -> str:
        return history_to_csv(self.history)


def history_to_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow({k: ("" if row.get(k) is None else repr(row[k])) for k in HISTORY_FIELDS})
    return buf.getvalue()


def train(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    optimizer,
    epochs: int,
    batch_size: int,
    rng: SeededRng,
    *,
    x_test: np.ndarray | None = None,
    y_test: np.ndarray | None = None,
    transductive_eval: int = 0,
    evaluate_every: int = 1,
) -> TrainResult:
    """Mini-batch training with seeded shuffling; mutates and returns ``model``.

    Incomplete trailing batches are dropped. ``transductive_eval`` caps the
    number of test rows scored transductively per evaluation (0 disables it).
    """
    if len(x) == 0:
        raise DataError("empty training set")
    y = check_labels(y, model.spec.classes)
    if batch_size < model.spec.k + 1:
        raise ParameterError(f"batch size {batch_size} too small for k={model.spec.k}")
    if len(x) < batch_size:
        raise DataError(f"{len(x)} training rows cannot fill a batch of {batch_size}")
    shuffle_rng = rng.stream("data")
    dropout_rng = rng.stream("dropout")
    phase = train_phase(dropout_rng)
    result = TrainResult(model)
    n_batches = len(x) // batch_size
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(x))
        losses = []
        for bi in range(n_batches):
            idx = order[bi * batch_size : (bi + 1) * batch_size]
            loss, grads, _ = loss_and_grads(model, x[idx], y[idx], phase)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {bi}")
            optimizer.step(model.params, grads)
            losses.append(loss)
        if evaluate_every and (epoch % evaluate_every == 0 or epoch == epochs):
            result.history.append(_evaluate(model, x, y, x_test, y_test, batch_size, transductive_eval, epoch, losses, rng))
    return result


def _evaluate(model, x, y, x_test, y_test, batch_size, transductive_eval, epoch, losses, rng) -> dict:
    row = {
        "epoch": epoch,
        "train_acc": accuracy_inductive(model, x, y, batch_size),
        "test_acc_inductive": None,
        "test_acc_transductive": None,
        "loss": float(np.mean(losses)),
    }
    if x_test is not None and len(x_test):
        row["test_acc_inductive"] = accuracy_inductive(model, x_test, y_test, batch_size)
        if transductive_eval:
            m = min(transductive_eval, len(x_test))
            eval_rng = rng.stream(f"eval.{epoch}")
            row["test_acc_transductive"] = accuracy_transductive(
                model, x_test[:m], y_test[:m], x, batch_size, eval_rng
            )
    return row


# ----------------------------------------------------------- gradient checking


@dataclass
class FdReport:
    passed: bool
    checked: int
    worst_error: float
    offenders: list[tuple[str, tuple[int, ...], float, float, float]]

    def __str__(self) -> str:
        head = f"{'PASS' if self.passed else 'FAIL'}: {self.checked} entries, worst error {self.worst_error:.3e}"
        lines = [head] + [
            f"  {name}{list(idx)} analytic={a:.10e} numeric={n:.10e} err={e:.3e}"
            for name, idx, a, n, e in self.offenders
        ]
        return "\n".join(lines)


def finite_difference_check(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    step: float = 1e-5,
    tolerance: float = 1e-5,
    *,
    max_entries: int | None = None,
    rng: SeededRng | None = None,
    report_top: int = 5,
) -> FdReport:
    """Compare tape gradients of the eval-phase loss with central differences.

    The per-layer neighborhoods from the analytic pass are reused for every
    perturbed evaluation, matching the tape's treatment of graph structure as
    a constant. Error per entry is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if step <= 0:
        raise ParameterError("finite-difference step must be positive")
    y = np.asarray(y, dtype=np.int64)
    _, grads, graphs = loss_and_grads(model, x, y, EVAL)
    entries = [(name, idx) for name in sorted(model.params) for idx in np.ndindex(model.params[name].shape)]
    if max_entries is not None and len(entries) > max_entries:
        picker = rng or SeededRng(0)
        keep = np.sort(picker.choice(len(entries), max_entries))
        entries = [entries[i] for i in keep]
    probe = model.copy()
    results = []
    for name, idx in entries:
        arr = probe.params[name]
        orig = arr[idx]
        arr[idx] = orig + step
        up = loss_value(probe, x, y, graphs)
        arr[idx] = orig - step
        down = loss_value(probe, x, y, graphs)
        arr[idx] = orig
        numeric = (up - down) / (2.0 * step)
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        results.append((name, idx, analytic, numeric, err))
    results.sort(key=lambda r: -r[4])
    worst = results[0][4] if results else 0.0
    return FdReport(worst <= tolerance, len(results), worst, results[:report_top])
