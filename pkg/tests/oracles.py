"""Independent reference implementations used only by the tests.

These deliberately avoid the package's kernels: plain Python loops, mpmath,
full sorts and dense matrices.
"""
from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np


def triple_loop_matmul(a, b):
    m, inner = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(inner):
                acc = acc + float(a[i, p]) * float(b[p, j])
            out[i, j] = acc
    return out


def mp_softmax(m, dps=50):
    with mpmath.workdps(dps):
        out = np.zeros(m.shape)
        for i, row in enumerate(m):
            ex = [mpmath.exp(mpmath.mpf(float(v))) for v in row]
            total = mpmath.fsum(ex)
            out[i] = [float(e / total) for e in ex]
    return out


def mp_cross_entropy(logits, labels, dps=50):
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        for row, y in zip(logits, labels):
            lse = mpmath.log(mpmath.fsum(mpmath.exp(mpmath.mpf(float(v))) for v in row))
            total += lse - mpmath.mpf(float(row[y]))
        return float(total / len(labels))


def pairwise_cosine(h):
    n = len(h)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ni = math.sqrt(sum(float(v) ** 2 for v in h[i]))
            nj = math.sqrt(sum(float(v) ** 2 for v in h[j]))
            if ni == 0 or nj == 0:
                out[i, j] = 0.0
            else:
                out[i, j] = sum(float(x) * float(y) for x, y in zip(h[i], h[j])) / (ni * nj)
    return out


def brute_force_topk(h, k):
    """Neighbors by full sort of (-similarity, index); self excluded."""
    s = pairwise_cosine(h)
    rows = []
    for i in range(len(h)):
        cand = sorted((-s[i, j], j) for j in range(len(h)) if j != i)
        rows.append([j for _, j in cand[:k]])
    return np.array(rows)


def dense_adjacency(neighbors, n):
    a = np.zeros((n, n))
    for i, row in enumerate(neighbors):
        for j in row:
            a[i, j] = 1.0
    return a


def leaky(x, slope=0.2):
    return np.where(x > 0, x, slope * x)


def per_edge_attention(h, neighbors, transforms, w1, b1, w2, b2):
    """Per-head attention rows computed edge by edge, then softmaxed per row."""
    heads = []
    for w in transforms:
        hw = h @ w
        rows = []
        for i, nbrs in enumerate(neighbors):
            scores = []
            for j in nbrs:
                v = np.abs(hw[i] - hw[j])
                scores.append(float((leaky(v @ w1 + b1) @ w2 + b2)[0]))
            scores = np.array(scores)
            e = np.exp(scores - scores.max())
            rows.append(e / e.sum())
        heads.append(np.array(rows))
    return heads


def direct_blur(image, kernel):
    """Direct 2-D convolution with reflect padding, one channel at a time."""
    c, height, width = image.shape
    r = kernel.shape[0] // 2
    out = np.zeros_like(image)

    def reflect(i, size):
        while i < 0 or i >= size:
            i = -i if i < 0 else 2 * (size - 1) - i
        return i

    for ch in range(c):
        for y in range(height):
            for x in range(width):
                acc = 0.0
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        acc += kernel[dy + r, dx + r] * image[ch, reflect(y + dy, height), reflect(x + dx, width)]
                out[ch, y, x] = acc
    return out


def direct_minibatch_discrimination(m):
    """o[i, a] = sum_j exp(-||M[i, a] - M[j, a]||_1), loops over every pair."""
    b, kernels, _ = m.shape
    out = np.zeros((b, kernels))
    for i in range(b):
        for a in range(kernels):
            out[i, a] = sum(math.exp(-float(np.sum(np.abs(m[i, a] - m[j, a])))) for j in range(b))
    return out


def min_simba_steps_2d(w, bias, x, epsilon, max_steps=8):
    """Fewest signed axis steps of size epsilon that flip sign(w.x + b), by enumeration."""
    start = np.sign(w @ x + bias)
    moves = [(axis, s) for axis in range(2) for s in (1.0, -1.0)]
    for n in range(1, max_steps + 1):
        for seq in itertools.product(moves, repeat=n):
            y = x.copy()
            for axis, s in seq:
                y[axis] += s * epsilon
            if np.sign(w @ y + bias) != start:
                return n
    return None
