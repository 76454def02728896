"""Neighborhood attention: multi-head self-attention over a sliding k x k window.

Every query pixel attends to exactly ``k*k`` keys.  Away from the borders
the window is centred on the query; near a border it is translated inward so
that it stays inside the image.  Attention logits get a learnable bias looked
up by the key's offset from the query, stored in a ``(heads, 2k-1, 2k-1)``
table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tensor import as_tensor, rng_truncated_normal


@dataclass
class NAParams:
    wq: np.ndarray   # (c, c), no bias
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray   # (c,) output projection bias
    rpb: np.ndarray  # (heads, 2k-1, 2k-1)
    heads: int
    kernel: int

    def arrays(self):
        return self.wq, self.wk, self.wv, self.wo, self.bo, self.rpb


def window_start(i: int, k: int, n: int) -> int:
    return min(max(i - k // 2, 0), n - k)


def neighborhood_indices(i: int, j: int, k: int, h: int, w: int) -> np.ndarray:
    """The ``(k*k, 2)`` array of (row, col) key positions for query ``(i, j)``."""
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    if k > min(h, w):
        raise ValueError(f"kernel {k} larger than {h}x{w} image")
    si, sj = window_start(i, k, h), window_start(j, k, w)
    rows, cols = np.meshgrid(np.arange(si, si + k), np.arange(sj, sj + k), indexing="ij")
    return np.stack([rows.ravel(), cols.ravel()], axis=1)


def _check(x, wq, rpb, heads, kernel):
    if x.ndim != 4:
        raise ValueError(f"expected (n, h, w, c) input, got {x.shape}")
    n, h, w, c = x.shape
    if c % heads:
        raise ValueError(f"{c} channels not divisible by {heads} heads")
    if kernel % 2 == 0:
        raise ValueError("kernel size must be odd")
    if kernel > min(h, w):
        raise ValueError(f"image {h}x{w} smaller than kernel {kernel}")
    if wq.shape != (c, c):
        raise ValueError("projection shape does not match channels")
    if rpb.shape != (heads, 2 * kernel - 1, 2 * kernel - 1):
        raise ValueError(f"bias table shape {rpb.shape} does not match heads/kernel")


def _tiles(h, row_tile):
    if not row_tile or row_tile >= h:
        return [(0, h)]
    return [(i, min(i + row_tile, h)) for i in range(0, h, row_tile)]


def _to_heads(x3, w, heads, h, wd):
    # (n, h*w, c) @ (c, c) produced directly in (n, c, h*w) order by BLAS
    n = x3.shape[0]
    c = w.shape[1]
    return np.matmul(w.T, x3.transpose(0, 2, 1)).reshape(n, heads, c // heads, h, wd)


def _attend(x, wq, wk, wv, rpb, heads, kernel, row_tile, keep):
    """Per-head attention output ``(n, heads, d, h, w)``; optionally the weights per tile."""
    _check(x, wq, rpb, heads, kernel)
    n, h, w, c = x.shape
    d = c // heads
    dtype = x.dtype
    scale = dtype.type(1.0 / math.sqrt(d))
    logits, normalize_av, _ = _kernels.kernels(d, kernel, dtype.name)
    x3 = x.reshape(n, h * w, c)
    q, k, v = (_to_heads(x3, m.astype(dtype, copy=False), heads, h, w) for m in (wq, wk, wv))
    rpb = np.ascontiguousarray(rpb, dtype=dtype).reshape(-1)
    o = np.empty_like(q)
    kept = []
    for i0, i1 in _tiles(h, row_tile):
        attn = np.empty((n, heads, kernel * kernel, i1 - i0, w), dtype=dtype)
        af = attn.reshape(-1)
        logits(q.reshape(-1), k.reshape(-1), rpb, af, n, heads, h, w, scale, i0, i1)
        np.exp(af, out=af)
        normalize_av(af, v.reshape(-1), o.reshape(-1), n, heads, h, w, i0, i1)
        if keep:
            kept.append(attn)
    return o, (x3, q, k, v, kept, scale)


def na_vjp(x, wq, wk, wv, wo, bo, rpb, *, heads: int, kernel: int, row_tile: int | None = None):
    """Forward pass plus pullback.

    ``row_tile`` computes query rows in tiles of that many rows; the output
    is bit-identical to the untiled pass.
    """
    n, h, w, c = x.shape
    o, (x3, q, k, v, kept, scale) = _attend(x, wq, wk, wv, rpb, heads, kernel, row_tile, True)
    o3 = o.reshape(n, c, h * w)
    out = np.matmul(o3.transpose(0, 2, 1), wo) + bo

    def pullback(g):
        _, _, backward = _kernels.kernels(c // heads, kernel, x.dtype.name)
        attn = kept[0] if len(kept) == 1 else np.concatenate(kept, axis=3)
        g3 = np.asarray(g, dtype=x.dtype).reshape(n, h * w, c)
        gwo = np.matmul(o3, g3).sum(axis=0)
        gbo = g3.sum(axis=(0, 1))
        go = np.matmul(wo, g3.transpose(0, 2, 1))  # (n, c, h*w)
        gq, gk, gv = (np.empty_like(q) for _ in range(3))
        grpb = np.zeros(rpb.shape, dtype=x.dtype)
        backward(go.reshape(-1), q.reshape(-1), k.reshape(-1), v.reshape(-1), attn.reshape(-1),
                 gq.reshape(-1), gk.reshape(-1), gv.reshape(-1), grpb.reshape(-1),
                 n, heads, h, w, scale)
        gx = np.zeros((n, h * w, c), dtype=x.dtype)
        grads = []
        for gm, m in ((gq, wq), (gk, wk), (gv, wv)):
            gm3 = gm.reshape(n, c, h * w)
            gx += np.matmul(gm3.transpose(0, 2, 1), m.T)
            grads.append(np.matmul(gm3, x3).sum(axis=0).T)
        return (gx.reshape(x.shape), *grads, gwo, gbo, grpb)

    return out.reshape(x.shape), pullback


def na_forward(x, p: NAParams, row_tile: int | None = None):
    """Inference pass; with ``row_tile`` only one tile of attention weights is alive at a time."""
    n, h, w, c = x.shape
    o, _ = _attend(x, p.wq, p.wk, p.wv, p.rpb, p.heads, p.kernel, row_tile, False)
    out = np.matmul(o.reshape(n, c, h * w).transpose(0, 2, 1), p.wo) + p.bo
    return out.reshape(x.shape)


def na_backward(x, p: NAParams, grad_out, row_tile: int | None = None):
    """Returns ``(grad_x, grad_params)`` with ``grad_params`` an :class:`NAParams`."""
    if grad_out.shape != x.shape:
        raise ValueError("grad_out shape differs from the input shape")
    _, pullback = na_vjp(x, *p.arrays(), heads=p.heads, kernel=p.kernel, row_tile=row_tile)
    gx, gwq, gwk, gwv, gwo, gbo, grpb = pullback(grad_out)
    return gx, NAParams(gwq, gwk, gwv, gwo, gbo, grpb, p.heads, p.kernel)


def attention_weights(x, p: NAParams) -> np.ndarray:
    """Softmax weights, shape ``(n, h, w, heads, k*k)`` in window row-major order."""
    _, (_, _, _, _, kept, _) = _attend(x, p.wq, p.wk, p.wv, p.rpb, p.heads, p.kernel, None, True)
    return np.ascontiguousarray(kept[0].transpose(0, 3, 4, 1, 2))


def na_param_count(c: int, heads: int, k: int, out_bias: bool = True) -> int:
    """Four c x c projections, the optional output bias, and the bias table."""
    return 4 * c * c + (c if out_bias else 0) + heads * (2 * k - 1) ** 2


def init_na_params(c, heads, kernel, seed, stream, std=0.02, dtype=None) -> NAParams:
    wq, wk, wv, wo = (rng_truncated_normal((c, c), std, seed, stream + s, dtype=dtype)
                      for s in range(4))
    bo = as_tensor(np.zeros(c), dtype)
    rpb = as_tensor(np.zeros((heads, 2 * kernel - 1, 2 * kernel - 1)), dtype)
    return NAParams(wq, wk, wv, wo, bo, rpb, heads, kernel)
