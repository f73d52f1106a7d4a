"""SimBA black-box attack in the pixel basis."""
from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .model import Model, transductive_batch, transductive_logits
from .rng import SeededRng
from .tensor_core import row_softmax


class CountingQuery:
    """Wraps a probability oracle and counts every call."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn
        self.calls = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        self.calls += 1
        return self.fn(x)


@dataclass
class AttackRecord:
    success: bool
    queries: int
    perturbation_norm: float
    steps: int
    skipped: bool = False


def simba_attack(
    model_query: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    y_true: int,
    epsilon: float,
    budget: int,
    rng: SeededRng,
) -> AttackRecord:
    """Greedy coordinate search lowering the true-class probability.

    Directions come from seeded permutations of the input coordinates; a fresh
    permutation is drawn after each full pass. Every model evaluation,
    including the initial one, counts toward ``budget``.
    """
    x0 = np.asarray(x, dtype=np.float64)
    probs = model_query(x0)
    queries = 1
    if int(np.argmax(probs)) != y_true:
        return AttackRecord(False, queries, 0.0, 0, skipped=True)
    current = x0.copy()
    best = probs[y_true]
    steps = 0
    d = x0.size
    while queries < budget:
        for q in rng.permutation(d):
            accepted = False
            for sign in (1.0, -1.0):
                if queries >= budget:
                    break
                trial = current.copy()
                trial.flat[q] += sign * epsilon
                p = model_query(trial)
                queries += 1
                if p[y_true] < best:
                    current, best, probs = trial, p[y_true], p
                    accepted = True
                    break
            if accepted:
                steps += 1
                if int(np.argmax(probs)) != y_true:
                    return AttackRecord(True, queries, float(np.linalg.norm(current - x0)), steps)
            if queries >= budget:
                break
    return AttackRecord(False, queries, float(np.linalg.norm(current - x0)), steps)


def transductive_query(model: Model, context: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Class probabilities for a single input classified among ``context`` rows."""

    def query(x: np.ndarray) -> np.ndarray:
        return row_softmax(transductive_logits(model, x, context)[None, :])[0]

    return query


@dataclass
class AttackSummary:
    attempted: int
    skipped: int
    successes: int
    success_rate: float
    mean_queries: float | None
    median_queries: float | None
    histogram_edges: list[float]
    histogram_counts: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(records: list[AttackRecord], budget: int, bins: int = 20) -> AttackSummary:
    """Mean/median queries are taken over successful attacks only."""
    attempted = [r for r in records if not r.skipped]
    wins = sorted(r.queries for r in attempted if r.success)
    edges = np.linspace(0, budget, bins + 1)
    counts, _ = np.histogram(wins, bins=edges)
    return AttackSummary(
        attempted=len(attempted),
        skipped=len(records) - len(attempted),
        successes=len(wins),
        success_rate=len(wins) / len(attempted) if attempted else 0.0,
        mean_queries=float(np.mean(wins)) if wins else None,
        median_queries=float(statistics.median(wins)) if wins else None,
        histogram_edges=[float(e) for e in edges],
        histogram_counts=[int(c) for c in counts],
    )


def attack_model(
    model: Model,
    x_targets: np.ndarray,
    y_targets: np.ndarray,
    train_pool: np.ndarray,
    batch_size: int,
    epsilon: float,
    budget: int,
    rng: SeededRng,
    max_attempts: int | None = None,
) -> list[AttackRecord]:
    """Attack each target in the transductive setting.

    Each target gets its own context batch and direction stream. Stops once
    ``max_attempts`` initially-correct targets have been attacked.
    """
    records = []
    attempted = 0
    for i, (x, y) in enumerate(zip(x_targets, y_targets)):
        if max_attempts is not None and attempted >= max_attempts:
            break
        target_rng = rng.stream(f"target.{i}")
        context = transductive_batch(x, train_pool, batch_size, target_rng.stream("context"))[1:]
        query = CountingQuery(transductive_query(model, context))
        rec = simba_attack(query, x, int(y), epsilon, budget, target_rng.stream("directions"))
        assert rec.queries == query.calls
        records.append(rec)
        attempted += not rec.skipped
    return records
