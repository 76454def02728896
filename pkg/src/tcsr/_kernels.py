"""Compiled sliding-window loops used by :mod:`tcsr.na`.

Per head the arrays are channel-major: ``q, k, v, out`` are ``(n, heads, d, h, w)``
and the attention cache is ``(n, heads, k*k, rows, w)``.  Everything is
passed flattened.

Column clamping is removed up front by gathering keys (and values) into
``kb[c, b, y, j] = k[c, y, sj(j) + b]``.  After that, for a fixed window
row ``a`` and column ``b``, the key of query ``(i, j)`` sits at
``kb[c, b, si(i) + a, j]``: every query row reads one contiguous key row, and
all interior rows (``si(i) = i - r``) form a single contiguous run.  The
inner loops are therefore long unit-stride loops that vectorise.  Gradients
w.r.t. keys and values are accumulated in the gathered layout and folded
back afterwards.

Offsets are converted to unsigned integers before the inner loops; with
signed indices numba adds negative-index wraparound, which blocks SIMD.

The forward kernels take a query row range ``[i0, i1)`` and the cache holds
only those rows.  Each output element is computed by the same sequence of
operations whatever the range, so row tiling is bit-identical to a single
pass.  The backward kernel always covers the whole image.

The NA kernels themselves live in :mod:`tcsr._na_kernels`, specialised per
head width, window and dtype; this module holds the shared inner loops, the
specialisation loader and the fused per-token kernels.
"""

from __future__ import annotations

import hashlib
import importlib.util
import os
import re
import sys
import tempfile
import types
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit, uint64

# no nnan/ninf: non-finite values must propagate so callers can detect them
_FM = {"reassoc", "contract", "nsz", "arcp"}


@njit(fastmath=_FM)
def _fma(dst, db, a, ab, b, bb, n):
    # dst[db:db+n] += a[ab:ab+n] * b[bb:bb+n]
    db, ab, bb = uint64(db), uint64(ab), uint64(bb)
    for j in range(uint64(n)):
        dst[db + j] += a[ab + j] * b[bb + j]


@njit
def _copy(dst, db, src, sb, n):
    db, sb = uint64(db), uint64(sb)
    for j in range(uint64(n)):
        dst[db + j] = src[sb + j]


@njit(fastmath=_FM)
def _add(dst, db, src, sb, n):
    db, sb = uint64(db), uint64(sb)
    for j in range(uint64(n)):
        dst[db + j] += src[sb + j]


@njit
def _fill(dst, db, value, n):
    db = uint64(db)
    for j in range(uint64(n)):
        dst[db + j] = value


@njit(fastmath=_FM)
def _sum(a, ab, n, acc):
    ab = uint64(ab)
    for j in range(uint64(n)):
        acc += a[ab + j]
    return acc


@njit(fastmath=_FM)
def _affine(dst, db, scale, shift, n):
    db = uint64(db)
    for j in range(uint64(n)):
        dst[db + j] = dst[db + j] * scale + shift


def _terms(count: int, accumulate: bool, module: str = __name__):
    """``dst[db+j] (+)= sum_m a[ab + m*sa + j] * b[bb + m*sb + j]`` with the ``m`` sum unrolled.

    A loop over ``m`` inside the ``j`` loop does not vectorise; writing the
    terms out does, and keeps one store per output element.
    """
    terms = " + ".join(f"a[ab + uint64({m}) * sa + j] * b[bb + uint64({m}) * sb + j]"
                       for m in range(count))
    src = ("def terms(dst, db, a, ab, sa, b, bb, sb, n):\n"
           "    db, ab, sa, bb, sb = uint64(db), uint64(ab), uint64(sa), uint64(bb), uint64(sb)\n"
           "    for j in range(uint64(n)):\n"
           f"        dst[db + j] {'+=' if accumulate else '='} {terms}\n")
    # the module name must be importable: numba re-imports it when loading cached code
    ns = {"uint64": uint64, "__name__": module}
    exec(src, ns)
    return njit(fastmath=_FM)(ns["terms"])


def _cache_dir() -> Path:
    root = os.environ.get("TCSR_CACHE_DIR")
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME") or Path.home() / ".cache") / "tcsr" / "kernels"


def _specialise(head_dim: int, ks: int, dtype: str) -> str:
    template = Path(__file__).with_name("_na_kernels.py").read_text()
    values = {"HEAD_DIM": str(head_dim), "WINDOW": str(ks), "DTYPE": repr(dtype), "CACHE": "True"}
    for name, value in values.items():
        template, hits = re.subn(rf"^{name} = .*$", f"{name} = {value}", template, count=1,
                                 flags=re.MULTILINE)
        assert hits == 1, name
    # callees are baked into cached code, so edits to this file must invalidate it too
    stamp = hashlib.blake2b(Path(__file__).read_bytes(), digest_size=8).hexdigest()
    return f"# generated from tcsr._na_kernels ({stamp}); do not edit\n" + template


def _load(name: str, path: Path):
    spec = importlib.util.spec_from_file_location(name, path)
    module = importlib.util.module_from_spec(spec)
    sys.modules[name] = module
    spec.loader.exec_module(module)
    return module


@lru_cache(maxsize=None)
def kernels(head_dim: int, ks: int, dtype: str):
    """``(logits, normalize_av, backward)`` for a fixed head width, window and dtype.

    The specialised module is written under ``$TCSR_CACHE_DIR`` (default
    ``~/.cache/tcsr/kernels``) and numba caches its machine code next to it,
    so only the first process on a machine pays for compilation.  If that
    directory is not writable the kernels are compiled in memory every time.
    """
    name = f"tcsr_na_d{head_dim}_k{ks}_{np.dtype(dtype).name}"
    source = _specialise(head_dim, ks, np.dtype(dtype).name)
    path = _cache_dir() / f"{name}.py"
    try:
        if not path.is_file() or path.read_text() != source:
            # rewrite only on change: numba's cache index is keyed on the file's mtime
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w") as f:
                f.write(source)
            os.replace(tmp, path)
        module = _load(name, path)
    except OSError:
        module = types.ModuleType(name)
        sys.modules[name] = module
        exec(compile(source.replace("CACHE = True", "CACHE = False"), name, "exec"),
             module.__dict__)
    return module.logits, module.normalize_av, module.backward


# ---------------------------------------------------------------------------
# fused per-token kernels


@njit(nogil=True, fastmath=_FM, cache=True)
def layernorm_forward(x, gamma, beta, eps, out, xhat, inv):
    """Rows of ``x`` (tokens, c): ``out = (x - mean) / sqrt(var + eps) * gamma + beta``."""
    m, c = x.shape
    for p in range(m):
        row = x[p]
        mu = row.sum() / c
        var = row.dtype.type(0)
        for ch in range(c):
            d = row[ch] - mu
            var += d * d
        s = 1.0 / np.sqrt(var / c + eps)
        inv[p] = s
        for ch in range(c):
            xh = (row[ch] - mu) * s
            xhat[p, ch] = xh
            out[p, ch] = xh * gamma[ch] + beta[ch]


@njit(nogil=True, fastmath=_FM, cache=True)
def layernorm_backward(g, xhat, inv, gamma, gx, ggamma, gbeta):
    # ggamma, gbeta accumulate over tokens in row order
    m, c = g.shape
    for p in range(m):
        a = g.dtype.type(0)
        b = g.dtype.type(0)
        for ch in range(c):
            gh = g[p, ch] * gamma[ch]
            a += gh
            b += gh * xhat[p, ch]
            ggamma[ch] += g[p, ch] * xhat[p, ch]
            gbeta[ch] += g[p, ch]
        a /= c
        b /= c
        for ch in range(c):
            gx[p, ch] = inv[p] * (g[p, ch] * gamma[ch] - a - xhat[p, ch] * b)


@njit(nogil=True, fastmath=_FM, cache=True)
def gelu_inner(x, c0, c1, out):
    # out = c0 * x * (1 + c1 * x^2), the tanh argument
    xf = x.reshape(-1)
    of = out.reshape(-1)
    for p in range(xf.size):
        v = xf[p]
        of[p] = c0 * v * (1.0 + c1 * v * v)


@njit(fastmath=_FM)
def _gelu_row(dst, db, x, t, sb, n, stride, size):
    # n pixels, ``size`` channels each, pixel stride ``stride``
    half = x.dtype.type(0.5)
    one = x.dtype.type(1)
    for j in range(uint64(n)):
        d = uint64(db) + j * uint64(stride)
        s = uint64(sb) + j * uint64(stride)
        for ch in range(uint64(size)):
            v = x[s + ch]
            dst[d + ch] = half * v * (one + t[s + ch])


@njit(fastmath=_FM)
def _gelu_grad_row(dst, db, g, gb, x, t, sb, n, stride, size, c0, c1):
    half = x.dtype.type(0.5)
    one = x.dtype.type(1)
    three = x.dtype.type(3)
    for j in range(uint64(n)):
        d = uint64(db) + j * uint64(stride)
        s = uint64(sb) + j * uint64(stride)
        e = uint64(gb) + j * uint64(stride)
        for ch in range(uint64(size)):
            v = x[s + ch]
            tv = t[s + ch]
            dg = half * (one + tv) + half * v * (one - tv * tv) * c0 * (one + three * c1 * v * v)
            dst[d + ch] = g[e + ch] * dg


@njit
def _zero_pixels(dst, db, n, stride, size):
    zero = dst.dtype.type(0)
    for j in range(uint64(n)):
        d = uint64(db) + j * uint64(stride)
        for ch in range(uint64(size)):
            dst[d + ch] = zero


@njit(nogil=True, fastmath=_FM, cache=True)
def gelu_shift_forward(x, t, dirs, out):
    """``out = shift(0.5 * x * (1 + t))`` with group ``g`` moved by ``dirs[g]``, zero fill."""
    n, h, w, c = x.shape
    size = c // dirs.shape[0]
    xf, tf, of = x.reshape(-1), t.reshape(-1), out.reshape(-1)
    for b in range(n):
        for i in range(h):
            row = (b * h + i) * w * c
            for gi in range(dirs.shape[0]):
                dy, dx = dirs[gi, 0], dirs[gi, 1]
                c0 = gi * size
                si = i - dy
                if si < 0 or si >= h:
                    _zero_pixels(of, row + c0, w, c, size)
                    continue
                j0, j1 = max(dx, 0), min(w + dx, w)
                _zero_pixels(of, row + c0, j0, c, size)
                _zero_pixels(of, row + j1 * c + c0, w - j1, c, size)
                src = ((b * h + si) * w + j0 - dx) * c + c0
                _gelu_row(of, row + j0 * c + c0, xf, tf, src, j1 - j0, c, size)


@njit(nogil=True, fastmath=_FM, cache=True)
def gelu_shift_backward(g, x, t, dirs, c0, c1, gx):
    # unshift g, then multiply by d gelu / dx
    n, h, w, c = x.shape
    size = c // dirs.shape[0]
    gf, xf, tf, of = g.reshape(-1), x.reshape(-1), t.reshape(-1), gx.reshape(-1)
    for b in range(n):
        for i in range(h):
            row = (b * h + i) * w * c
            for gi in range(dirs.shape[0]):
                dy, dx = dirs[gi, 0], dirs[gi, 1]
                k0 = gi * size
                di = i + dy
                if di < 0 or di >= h:
                    _zero_pixels(of, row + k0, w, c, size)
                    continue
                j0, j1 = max(-dx, 0), min(w - dx, w)
                _zero_pixels(of, row + k0, j0, c, size)
                _zero_pixels(of, row + j1 * c + k0, w - j1, c, size)
                gsrc = ((b * h + di) * w + j0 + dx) * c + k0
                _gelu_grad_row(of, row + j0 * c + k0, gf, gsrc, xf, tf, row + j0 * c + k0,
                               j1 - j0, c, size, c0, c1)
