"""Dense float64 kernels and the MBGT tensor file format.

A "dense matrix" throughout the package is a 2-D, C-contiguous
``numpy.float64`` array.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError, ShapeError
from .rng import SeededRng

MBGT_MAGIC = b"MBGT"


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed summation order.

    Every output entry is accumulated as ``((0 + a[i,0] b[0,j]) + a[i,1] b[1,j]) + ...``,
    i.e. exactly what a naive triple loop produces. BLAS is not used because
    its blocking changes the rounding. Small outputs accumulate a product
    tensor along the inner axis; larger ones loop over the inner index and
    add one rank-1 update at a time. Both keep the same order per entry.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    m, inner = a.shape
    n = b.shape[1]
    if m * n <= 512 and m * n * inner <= 1 << 23:
        # narrow outputs: form all products, then accumulate left-to-right
        # (add.accumulate is sequential, unlike add.reduce)
        prods = a[:, None, :] * np.asarray(b, dtype=np.float64).T[None, :, :]
        if inner == 0:
            return np.zeros((m, n))
        return np.add.accumulate(prods, axis=2)[:, :, -1] + 0.0
    at = np.ascontiguousarray(a.T, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    tmp = np.empty_like(out)
    for p in range(at.shape[0]):
        np.multiply(at[p][:, None], b[p], out=tmp)
        out += tmp
    return out


def row_softmax(m: np.ndarray) -> np.ndarray:
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cosine_similarity_matrix(h: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of the rows of ``h``.

    Rows with zero norm have similarity 0 to every row, themselves included.
    """
    h = as_matrix(h, "h")
    norms = np.sqrt(np.sum(h * h, axis=1))
    safe = np.where(norms > 0, norms, 1.0)
    unit = h / safe[:, None]
    # products are commutative and summed in the same order, so S is exactly symmetric
    s = matmul(unit, unit.T)
    zero = norms == 0
    s[zero, :] = 0.0
    s[:, zero] = 0.0
    return np.clip(s, -1.0, 1.0)


def gaussian_sample(rng: SeededRng, rows: int, cols: int, sigma: float) -> np.ndarray:
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    return rng.normal((rows, cols), sigma)


def write_mbgt(path, tensor) -> None:
    """Write ``tensor`` as MBGT: magic, u32 rank, u32 dims, float32 LE payload."""
    arr = np.asarray(tensor)
    header = MBGT_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_mbgt(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MBGT_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    dims = struct.unpack_from(f"<{rank}I", raw, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - offset != 4 * count:
        raise DataError(f"{path}: payload has {len(raw) - offset} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(dims).copy()
