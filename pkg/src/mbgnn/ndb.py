"""Number of statistically Different Bins (NDB) for sample diversity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import DataError, ParameterError
from .rng import SeededRng


def squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=2)


def assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per row; ties go to the lower bin index."""
    return np.argmin(squared_distances(x, centroids), axis=1)


def kmeans_pp_init(x: np.ndarray, k: int, rng: SeededRng) -> np.ndarray:
    n = len(x)
    centroids = [x[int(rng.integers(n, 1)[0])]]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total == 0:
            idx = int(rng.integers(n, 1)[0])
        else:
            cum = np.cumsum(d2)
            idx = int(np.searchsorted(cum, rng.uniform(1)[0] * total, side="right"))
            idx = min(idx, n - 1)
        centroids.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centroids)


def kmeans(x: np.ndarray, k: int, rng: SeededRng, max_iter: int = 100) -> np.ndarray:
    """Lloyd iterations from a k-means++ start; empty clusters keep their centroid."""
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= k <= len(x):
        raise ParameterError(f"need 1 <= K <= {len(x)}, got {k}")
    centroids = kmeans_pp_init(x, k, rng)
    labels = assign(x, centroids)
    for _ in range(max_iter):
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
        new = assign(x, centroids)
        if np.array_equal(new, labels):
            break
        labels = new
    return centroids


def proportion_z(count_a: int, n_a: int, count_b: int, n_b: int) -> float:
    """Two-sample proportion z statistic (b minus a) with pooled variance."""
    pooled = (count_a + count_b) / (n_a + n_b)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b))
    if se == 0:
        return 0.0
    return (count_b / n_b - count_a / n_a) / se


@dataclass
class NdbBins:
    centroids: np.ndarray
    train_counts: np.ndarray
    n_train: int


@dataclass
class NdbReport:
    k: int
    train_proportions: list[float]
    generated_proportions: list[float]
    z: list[float]
    significant: list[bool]
    excluded_bins: list[int] = field(default_factory=list)
    ndb_score: float = 0.0

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "ndb_score": self.ndb_score,
            "excluded_bins": self.excluded_bins,
            "train_proportions": self.train_proportions,
            "generated_proportions": self.generated_proportions,
            "z": self.z,
            "significant": self.significant,
        }


def fit_bins(train_samples: np.ndarray, k: int, rng: SeededRng, max_iter: int = 100) -> NdbBins:
    train = np.asarray(train_samples, dtype=np.float64)
    if len(train) == 0:
        raise DataError("no training samples to bin")
    centroids = kmeans(train, k, rng, max_iter)
    counts = np.bincount(assign(train, centroids), minlength=k)
    return NdbBins(centroids, counts, len(train))


def ndb_from_bins(bins: NdbBins, generated_samples: np.ndarray, significance: float = 0.05) -> NdbReport:
    gen = np.asarray(generated_samples, dtype=np.float64)
    if len(gen) == 0:
        raise DataError("no generated samples")
    k = len(bins.centroids)
    gen_counts = np.bincount(assign(gen, bins.centroids), minlength=k)
    critical = NormalDist().inv_cdf(1.0 - significance / 2.0)
    z, sig, excluded = [], [], []
    for j in range(k):
        zj = proportion_z(int(bins.train_counts[j]), bins.n_train, int(gen_counts[j]), len(gen))
        z.append(zj)
        if bins.train_counts[j] == 0:
            excluded.append(j)
            sig.append(False)
        else:
            sig.append(abs(zj) > critical)
    effective = k - len(excluded)
    return NdbReport(
        k=k,
        train_proportions=[float(c) / bins.n_train for c in bins.train_counts],
        generated_proportions=[float(c) / len(gen) for c in gen_counts],
        z=z,
        significant=sig,
        excluded_bins=excluded,
        ndb_score=sum(sig) / effective if effective else 0.0,
    )


def ndb_score(
    train_samples: np.ndarray,
    generated_samples: np.ndarray,
    k: int,
    significance: float = 0.05,
    rng: SeededRng | None = None,
    max_iter: int = 100,
) -> NdbReport:
    """Cluster the training samples into ``k`` bins and test per-bin occupancy."""
    bins = fit_bins(train_samples, k, rng or SeededRng(0), max_iter)
    return ndb_from_bins(bins, generated_samples, significance)
