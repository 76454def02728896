"""Dense tensor primitives.

Tensors are plain ``numpy.ndarray`` objects laid out as (batch, height,
width, channel), row-major.  The helpers here add the shape checks and the
reproducible random number generation the rest of the package relies on.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.dtype(np.float32)


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    """Switch the library-wide float type (``float32`` or ``float64``)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


class precision:
    """Context manager that temporarily changes the default dtype.

    >>> with precision(np.float64):
    ...     x = as_tensor([1, 2])
    """

    def __init__(self, dtype):
        self.dtype = np.dtype(dtype)
        self._saved = None

    def __enter__(self):
        self._saved = default_dtype()
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self._saved)
        return False


def as_tensor(data, dtype=None) -> np.ndarray:
    return np.ascontiguousarray(data, dtype=dtype or _DEFAULT_DTYPE)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


def _broadcastable_trailing(a_shape, b_shape) -> bool:
    if len(b_shape) > len(a_shape):
        return False
    tail = a_shape[len(a_shape) - len(b_shape):]
    return all(bs in (1, as_) for as_, bs in zip(tail, b_shape))


def elementwise(op: Callable, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Apply a unary or binary numpy ufunc-like ``op``.

    ``b`` may be broadcast along trailing axes only; the result always has
    ``a``'s shape.
    """
    a = np.asarray(a)
    if b is None:
        return np.asarray(op(a))
    b = np.asarray(b)
    if a.shape != b.shape and not _broadcastable_trailing(a.shape, b.shape):
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.asarray(op(a, b))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax_lastdim(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, computed after subtracting the slice max."""
    x = np.asarray(x)
    if x.shape[-1] < 1:
        raise ValueError("softmax over an empty axis")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    e /= e.sum(axis=-1, keepdims=True)
    return e


def pad_zero(x: np.ndarray, pads: Sequence[tuple[int, int]] | int) -> np.ndarray:
    x = np.asarray(x)
    if isinstance(pads, int):
        pads = [(pads, pads)] * x.ndim
    if len(pads) != x.ndim or any(lo < 0 or hi < 0 for lo, hi in pads):
        raise ValueError(f"invalid pad spec {pads} for rank {x.ndim}")
    return np.pad(x, pads, mode="constant", constant_values=0)


def slice_(x: np.ndarray, ranges: Sequence[tuple[int, int]]) -> np.ndarray:
    x = np.asarray(x)
    if len(ranges) != x.ndim:
        raise ValueError("one (start, stop) pair per axis required")
    idx = []
    for (lo, hi), n in zip(ranges, x.shape):
        if not 0 <= lo <= hi <= n:
            raise IndexError(f"range ({lo}, {hi}) outside axis of length {n}")
        idx.append(slice(lo, hi))
    return x[tuple(idx)].copy()


def permute(x: np.ndarray, order: Sequence[int]) -> np.ndarray:
    x = np.asarray(x)
    if sorted(order) != list(range(x.ndim)):
        raise ValueError(f"{order} is not a permutation of {x.ndim} axes")
    return np.ascontiguousarray(np.transpose(x, order))


# Random numbers: Philox-4x64 (counter based) supplies raw 64-bit words keyed by
# (seed, stream); Box-Muller turns pairs of 53-bit uniforms into normals.
# Both pieces are fixed so a given (seed, stream) reproduces on any platform.

def _uniform_open(bitgen: np.random.Philox, count: int) -> np.ndarray:
    raw = bitgen.random_raw(count)
    # (0, 1]: never zero, so log() below is safe
    return ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)


def _box_muller(bitgen: np.random.Philox, count: int) -> np.ndarray:
    pairs = (count + 1) // 2
    u1 = _uniform_open(bitgen, pairs)
    u2 = _uniform_open(bitgen, pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * math.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = radius * np.cos(theta)
    z[1::2] = radius * np.sin(theta)
    return z[:count]


def rng_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """A numpy ``Generator`` on the same ``(seed, stream)``-keyed Philox stream."""
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream]))


def rng_normal(shape, mean: float = 0.0, std: float = 1.0, seed: int = 0,
               stream: int = 0, dtype=None) -> np.ndarray:
    """Deterministic normal samples keyed by ``(seed, stream)``."""
    if std < 0:
        raise ValueError("std must be non-negative")
    shape = (int(shape),) if np.ndim(shape) == 0 else tuple(int(n) for n in shape)
    count = int(np.prod(shape, dtype=np.int64))
    bitgen = np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream])
    z = _box_muller(bitgen, count)
    return as_tensor((mean + std * z).reshape(shape), dtype)


def rng_truncated_normal(shape, std: float, seed: int, stream: int = 0,
                         bound: float = 2.0, dtype=None) -> np.ndarray:
    """Zero-mean normal with samples outside ``bound`` standard deviations redrawn."""
    shape = tuple(shape)
    count = int(np.prod(shape, dtype=np.int64))
    bitgen = np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream])
    z = _box_muller(bitgen, count)
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = _box_muller(bitgen, int(bad.sum()))
        bad = np.abs(z) > bound
    return as_tensor((std * z).reshape(shape), dtype)


def rng_uniform(shape, low: float = 0.0, high: float = 1.0, seed: int = 0,
                stream: int = 0, dtype=None) -> np.ndarray:
    shape = tuple(shape)
    count = int(np.prod(shape, dtype=np.int64))
    bitgen = np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, stream])
    u = _uniform_open(bitgen, count)
    return as_tensor((low + (high - low) * u).reshape(shape), dtype)
