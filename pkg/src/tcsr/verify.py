"""Independent reference implementations and gradient checking.

The oracles below are written loop by loop from the defining formulas and
import nothing from the rest of the package, so a bug in a fast kernel
cannot be mirrored here.  They are slow and meant for small inputs in f64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def relative_error(a, b) -> np.ndarray:
    """``|a-b| / max(|a|, |b|, 1e-8)`` elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(x+h e_i) - f(x-h e_i)) / 2h`` for every element of ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        fp = float(f(x))
        flat[idx] = orig - step
        fm = float(f(x))
        flat[idx] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at element {idx}")
        gflat[idx] = (fp - fm) / (2.0 * step)
    return grad


# ---------------------------------------------------------------------------
# attention

def _window_start(i, k, n):
    s = i - k // 2
    if s < 0:
        s = 0
    if s > n - k:
        s = n - k
    return s


def global_sa_oracle(x, wq, wk, wv, wo, bo, rpb, heads: int):
    """Dense all-pairs multi-head attention with a relative-offset bias.

    The bias for query ``p`` and key ``t`` is ``rpb[g, dy + K - 1, dx + K - 1]``
    where ``(dy, dx) = t - p`` and ``K = (rpb.shape[1] + 1) // 2``.  Pairs whose
    offset falls outside the table get no bias (they never occur when the
    table covers the image).
    """
    n_, h_, w_, c_ = x.shape
    d = c_ // heads
    kt = (rpb.shape[1] + 1) // 2
    out = np.zeros((n_, h_, w_, c_))
    for n in range(n_):
        pix = [(i, j) for i in range(h_) for j in range(w_)]
        q = np.zeros((len(pix), c_))
        k = np.zeros((len(pix), c_))
        v = np.zeros((len(pix), c_))
        for p, (i, j) in enumerate(pix):
            for co in range(c_):
                for ci in range(c_):
                    q[p, co] += x[n, i, j, ci] * wq[ci, co]
                    k[p, co] += x[n, i, j, ci] * wk[ci, co]
                    v[p, co] += x[n, i, j, ci] * wv[ci, co]
        for p, (i, j) in enumerate(pix):
            heads_out = np.zeros(c_)
            for g in range(heads):
                logits = []
                for t, (ti, tj) in enumerate(pix):
                    s = 0.0
                    for c in range(g * d, (g + 1) * d):
                        s += q[p, c] * k[t, c]
                    s /= math.sqrt(d)
                    dy, dx = ti - i, tj - j
                    if abs(dy) < kt and abs(dx) < kt:
                        s += rpb[g, dy + kt - 1, dx + kt - 1]
                    logits.append(s)
                m = max(logits)
                e = [math.exp(s - m) for s in logits]
                z = sum(e)
                for t in range(len(pix)):
                    for c in range(g * d, (g + 1) * d):
                        heads_out[c] += e[t] / z * v[t, c]
            i, j = pix[p]
            for co in range(c_):
                acc = bo[co]
                for ci in range(c_):
                    acc += heads_out[ci] * wo[ci, co]
                out[n, i, j, co] = acc
    return out


def windowed_sa_oracle(x, wq, wk, wv, wo, bo, rpb, heads: int, kernel: int):
    """Loop-form neighbourhood attention with inward-clamped windows."""
    n_, h_, w_, c_ = x.shape
    d = c_ // heads
    q = np.einsum("nhwi,io->nhwo", x, wq)
    k = np.einsum("nhwi,io->nhwo", x, wk)
    v = np.einsum("nhwi,io->nhwo", x, wv)
    out = np.zeros((n_, h_, w_, c_))
    for n in range(n_):
        for i in range(h_):
            si = _window_start(i, kernel, h_)
            for j in range(w_):
                sj = _window_start(j, kernel, w_)
                cat = np.zeros(c_)
                for g in range(heads):
                    sl = slice(g * d, (g + 1) * d)
                    logits = []
                    keys = [(si + a, sj + b) for a in range(kernel) for b in range(kernel)]
                    for ti, tj in keys:
                        s = float(np.dot(q[n, i, j, sl], k[n, ti, tj, sl])) / math.sqrt(d)
                        s += rpb[g, ti - i + kernel - 1, tj - j + kernel - 1]
                        logits.append(s)
                    m = max(logits)
                    e = [math.exp(s - m) for s in logits]
                    z = sum(e)
                    for (ti, tj), ev in zip(keys, e):
                        cat[sl] += ev / z * v[n, ti, tj, sl]
                out[n, i, j] = cat @ wo + bo
    return out


# ---------------------------------------------------------------------------
# convolution and shift

def naive_conv_oracle(x, weight, bias=None):
    """Direct zero-padded 'same' convolution, six nested loops."""
    n_, h_, w_, cin = x.shape
    kh, kw, _, cout = weight.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((n_, h_, w_, cout))
    for n in range(n_):
        for i in range(h_):
            for j in range(w_):
                for co in range(cout):
                    acc = 0.0 if bias is None else float(bias[co])
                    for a in range(kh):
                        ii = i + a - ph
                        if ii < 0 or ii >= h_:
                            continue
                        for b in range(kw):
                            jj = j + b - pw
                            if jj < 0 or jj >= w_:
                                continue
                            for ci in range(cin):
                                acc += x[n, ii, jj, ci] * weight[a, b, ci, co]
                    out[n, i, j, co] = acc
    return out


def shift_kernels(channels: int, directions) -> np.ndarray:
    """One-hot depthwise kernels, shape ``(2s+1, 2s+1, channels)``, realising a group shift."""
    groups = len(directions)
    s = max(max(abs(dy), abs(dx)) for dy, dx in directions) if directions else 0
    size = channels // groups
    ker = np.zeros((2 * s + 1, 2 * s + 1, channels))
    for g, (dy, dx) in enumerate(directions):
        # out[i, j] = x[i - dy, j - dx]  ->  tap at (s - dy, s - dx)
        ker[s - dy, s - dx, g * size:(g + 1) * size] = 1.0
    return ker


def depthwise_shift_oracle(x, directions):
    """Spatial shift computed as a zero-padded depthwise convolution with one-hot kernels."""
    n_, h_, w_, c_ = x.shape
    ker = shift_kernels(c_, directions).astype(x.dtype)
    ks = ker.shape[0]
    p = ks // 2
    out = np.zeros(x.shape, dtype=x.dtype)
    for n in range(n_):
        for i in range(h_):
            for j in range(w_):
                for c in range(c_):
                    acc = x.dtype.type(0)
                    for a in range(ks):
                        ii = i + a - p
                        if ii < 0 or ii >= h_:
                            continue
                        for b in range(ks):
                            jj = j + b - p
                            if jj < 0 or jj >= w_:
                                continue
                            acc = acc + ker[a, b, c] * x[n, ii, jj, c]
                    out[n, i, j, c] = acc
    return out


def pixelshuffle_oracle(x, r):
    n_, h_, w_, c_ = x.shape
    co = c_ // (r * r)
    out = np.zeros((n_, h_ * r, w_ * r, co), dtype=x.dtype)
    for n in range(n_):
        for i in range(h_):
            for j in range(w_):
                for c in range(co):
                    for dy in range(r):
                        for dx in range(r):
                            out[n, i * r + dy, j * r + dx, c] = x[n, i, j, c * r * r + dy * r + dx]
    return out


# ---------------------------------------------------------------------------
# gradient check harness

@dataclass
class GradCheckReport:
    op: str
    seed: int
    step: float
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    failing: dict[str, list[tuple[int, ...]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(not v for v in self.failing.values())

    def lines(self) -> list[str]:
        head = f"{self.op} seed={self.seed} step={self.step:g}"
        out = [head]
        for name, err in self.max_rel_error.items():
            status = "ok" if not self.failing.get(name) else f"FAIL at {self.failing[name][:3]}"
            out.append(f"  {name:<10} max rel err {err:.3e}  {status}")
        return out


def _check_error(analytic, numeric, tol):
    err = relative_error(analytic, numeric)
    bad = [tuple(int(v) for v in ix) for ix in np.argwhere(err > tol)]
    return float(err.max(initial=0.0)), bad


def check_vjp(name: str, vjp: Callable, inputs: dict[str, np.ndarray], seed: int,
              static: dict | None = None, step: float = 1e-5, tol: float = 1e-4,
              skip: tuple[str, ...] = ()) -> GradCheckReport:
    """Compare ``vjp``'s pullback against central differences.

    The scalar checked is ``L = sum(c * f(inputs))`` for a fixed random
    cotangent ``c``.  Every input gets its own entry in the report.
    """
    static = static or {}
    names = list(inputs)
    values = [np.array(inputs[k], dtype=np.float64) for k in names]
    out, pullback = vjp(*values, **static)
    rng = np.random.default_rng(seed + 7919)
    cot = rng.standard_normal(np.shape(out))
    analytic = pullback(cot)
    report = GradCheckReport(name, seed, step, tol)
    for pos, key in enumerate(names):
        if key in skip or analytic[pos] is None:
            continue

        def loss(v, pos=pos):
            args = list(values)
            args[pos] = v
            # exact summation keeps roundoff out of the difference quotient
            return math.fsum((cot * vjp(*args, **static)[0]).ravel())

        numeric = finite_diff_grad(loss, values[pos], step)
        err, bad = _check_error(analytic[pos], numeric, tol)
        report.max_rel_error[key] = err
        report.failing[key] = bad
    return report
