"""Sliding-window NA kernels for one head width, window size and dtype.

:func:`tcsr._kernels.kernels` writes a copy of this file with the four
constants below replaced and imports that copy, so each specialisation is a
separate module numba can cache on disk.  Closures over these values would
not cache: their key includes the captured dispatchers, which pickle
differently in every process.  This file itself is importable with the
defaults.
"""

import numpy as np
from numba import njit, uint64

from tcsr._kernels import _FM, _add, _affine, _copy, _fill, _fma, _sum, _terms

HEAD_DIM = 4
WINDOW = 3
DTYPE = "float64"
CACHE = False

D = HEAD_DIM
KS = WINDOW
R = KS // 2
KK = KS * KS
RS = 2 * KS - 1
DT = np.dtype(DTYPE)
ZERO = DT.type(0)
ONE = DT.type(1)
dot_d = _terms(D, accumulate=False, module=__name__)
acc_ks = _terms(KS, accumulate=True, module=__name__)


@njit
def start(i, H):
    return min(max(i - R, 0), H - KS)


@njit
def gather(src, sbase, dst, H, W, klo, nr):
    # dst[c, b, y - klo, j] = src[c, y, sj(j) + b] for key rows y in [klo, klo + nr)
    for c in range(D):
        for b in range(KS):
            for y in range(nr):
                s = sbase + (c * H + klo + y) * W
                d = ((c * KS + b) * nr + y) * W
                _copy(dst, d + R, src, s + b, W - 2 * R)
                for j in range(R):
                    dst[d + j] = src[s + b]
                    dst[d + W - R + j] = src[s + W - KS + b]


@njit
def fold(src, dst, dbase, H, W):
    # inverse of gather for gradients: dst[c, y, sj(j) + b] += src[c, b, y, j]
    for c in range(D):
        for b in range(KS):
            for y in range(H):
                s = ((c * KS + b) * H + y) * W
                d = dbase + (c * H + y) * W
                _add(dst, d + b, src, s + R, W - 2 * R)
                for j in range(R):
                    dst[d + b] += src[s + j]
                    dst[d + W - KS + b] += src[s + W - R + j]


@njit(nogil=True, fastmath=_FM, cache=CACHE)
def logits(q, k, rpb, attn, N, G, H, W, scale, i0, i1):
    """Scaled logits plus bias for query rows ``[i0, i1)``, per-query max subtracted."""
    HW = H * W
    T = i1 - i0
    klo = start(i0, H)
    nr = start(i1 - 1, H) + KS - klo
    kb = np.empty(D * KS * nr * W, DT)
    mx = np.empty(T * W, DT)
    lo, hi = max(i0, R), min(i1, H - R)
    for n in range(N):
        for g in range(G):
            base = (n * G + g) * D * HW
            gather(k, base, kb, H, W, klo, nr)
            ab = (n * G + g) * KK * T * W
            for a in range(KS):
                for b in range(KS):
                    tb = ab + (a * KS + b) * T * W
                    kcol = b * nr * W
                    if hi > lo:
                        dot_d(attn, tb + (lo - i0) * W, q, base + lo * W, HW,
                              kb, kcol + (lo - R + a - klo) * W, KS * nr * W, (hi - lo) * W)
                    for i in range(i0, min(i1, R)):
                        dot_d(attn, tb + (i - i0) * W, q, base + i * W, HW,
                              kb, kcol + (a - klo) * W, KS * nr * W, W)
                    for i in range(max(i0, H - R), i1):
                        dot_d(attn, tb + (i - i0) * W, q, base + i * W, HW,
                              kb, kcol + (H - KS + a - klo) * W, KS * nr * W, W)
                    for i in range(i0, i1):
                        rrow = (g * RS + start(i, H) + a - i + KS - 1) * RS
                        rb = tb + (i - i0) * W
                        _affine(attn, rb + R, scale, rpb[rrow + b + R], W - 2 * R)
                        for j in range(R):
                            attn[rb + j] = attn[rb + j] * scale + rpb[rrow + b - j + 2 * R]
                        for j in range(W - R, W):
                            attn[rb + j] = attn[rb + j] * scale + rpb[rrow + W - KS + b - j + 2 * R]
            _copy(mx, 0, attn, ab, T * W)
            u0 = uint64(0)
            for t in range(1, KK):
                ut = uint64(ab + t * T * W)
                for j in range(uint64(T * W)):
                    mx[u0 + j] = max(mx[u0 + j], attn[ut + j])
            for t in range(KK):
                ut = uint64(ab + t * T * W)
                for j in range(uint64(T * W)):
                    attn[ut + j] -= mx[u0 + j]


@njit(nogil=True, fastmath=_FM, cache=CACHE)
def normalize_av(attn, v, out, N, G, H, W, i0, i1):
    """Turn exponentiated logits into weights and apply them to the values."""
    HW = H * W
    T = i1 - i0
    klo = start(i0, H)
    nr = start(i1 - 1, H) + KS - klo
    vb = np.empty(D * KS * nr * W, DT)
    s = np.empty(T * W, DT)
    u0 = uint64(0)
    lo, hi = max(i0, R), min(i1, H - R)
    for n in range(N):
        for g in range(G):
            base = (n * G + g) * D * HW
            ab = (n * G + g) * KK * T * W
            _copy(s, 0, attn, ab, T * W)
            for t in range(1, KK):
                _add(s, 0, attn, ab + t * T * W, T * W)
            for j in range(uint64(T * W)):
                s[u0 + j] = ONE / s[u0 + j]
            for t in range(KK):
                ut = uint64(ab + t * T * W)
                for j in range(uint64(T * W)):
                    attn[ut + j] *= s[u0 + j]
            gather(v, base, vb, H, W, klo, nr)
            for c in range(D):
                ob = base + c * HW
                _fill(out, ob + i0 * W, ZERO, T * W)
                vc = c * KS * nr * W
                for a in range(KS):
                    ta = ab + a * KS * T * W
                    if hi > lo:
                        acc_ks(out, ob + lo * W, attn, ta + (lo - i0) * W, T * W,
                               vb, vc + (lo - R + a - klo) * W, nr * W, (hi - lo) * W)
                    for i in range(i0, min(i1, R)):
                        acc_ks(out, ob + i * W, attn, ta + (i - i0) * W, T * W,
                               vb, vc + (a - klo) * W, nr * W, W)
                    for i in range(max(i0, H - R), i1):
                        acc_ks(out, ob + i * W, attn, ta + (i - i0) * W, T * W,
                               vb, vc + (H - KS + a - klo) * W, nr * W, W)


@njit(nogil=True, fastmath=_FM, cache=CACHE)
def backward(go, q, k, v, attn, gq, gk, gv, grpb, N, G, H, W, scale):
    # gq, gk, gv are overwritten; grpb accumulates (caller zeroes it)
    HW = H * W
    kb = np.empty(D * KS * HW, DT)
    vb = np.empty(D * KS * HW, DT)
    gkb = np.empty(D * KS * HW, DT)
    gvb = np.empty(D * KS * HW, DT)
    gl = np.empty(KK * HW, DT)
    acc = np.empty(HW, DT)
    u0 = uint64(0)
    lo, hi = R, H - R
    for n in range(N):
        for g in range(G):
            base = (n * G + g) * D * HW
            ab = (n * G + g) * KK * HW
            gather(k, base, kb, H, W, 0, H)
            gather(v, base, vb, H, W, 0, H)
            _fill(gkb, 0, ZERO, D * KS * HW)
            _fill(gvb, 0, ZERO, D * KS * HW)
            # weight gradient: gl[t] = sum_c go[c] * v[key(t)]
            for a in range(KS):
                for b in range(KS):
                    tl = (a * KS + b) * HW
                    vcol = b * HW
                    dot_d(gl, tl + lo * W, go, base + lo * W, HW,
                          vb, vcol + (lo - R + a) * W, KS * HW, (hi - lo) * W)
                    for i in range(R):
                        dot_d(gl, tl + i * W, go, base + i * W, HW, vb, vcol + a * W, KS * HW, W)
                    for i in range(H - R, H):
                        dot_d(gl, tl + i * W, go, base + i * W, HW,
                              vb, vcol + (H - KS + a) * W, KS * HW, W)
            # value gradient in the gathered layout
            for c in range(D):
                gc = base + c * HW
                for a in range(KS):
                    for b in range(KS):
                        tb = ab + (a * KS + b) * HW
                        vr = (c * KS + b) * HW
                        _fma(gvb, vr + (lo - R + a) * W, attn, tb + lo * W, go, gc + lo * W,
                             (hi - lo) * W)
                        for i in range(R):
                            _fma(gvb, vr + a * W, attn, tb + i * W, go, gc + i * W, W)
                        for i in range(H - R, H):
                            _fma(gvb, vr + (H - KS + a) * W, attn, tb + i * W, go, gc + i * W, W)
            # softmax Jacobian
            _fill(acc, 0, ZERO, HW)
            for t in range(KK):
                _fma(acc, 0, attn, ab + t * HW, gl, t * HW, HW)
            for t in range(KK):
                ut = uint64(ab + t * HW)
                ul = uint64(t * HW)
                for j in range(uint64(HW)):
                    gl[ul + j] = attn[ut + j] * (gl[ul + j] - acc[u0 + j])
            # bias table
            for a in range(KS):
                for b in range(KS):
                    tl = (a * KS + b) * HW
                    for i in range(H):
                        rrow = (g * RS + start(i, H) + a - i + KS - 1) * RS
                        rb = tl + i * W
                        grpb[rrow + b + R] = _sum(gl, rb + R, W - 2 * R, grpb[rrow + b + R])
                        for j in range(R):
                            grpb[rrow + b - j + 2 * R] += gl[rb + j]
                        for j in range(W - R, W):
                            grpb[rrow + W - KS + b - j + 2 * R] += gl[rb + j]
            for j in range(uint64(KK * HW)):
                gl[u0 + j] *= scale
            # query gradient, and key gradient in the gathered layout
            for c in range(D):
                qc = base + c * HW
                kc = c * KS * HW
                _fill(gq, qc, ZERO, HW)
                for a in range(KS):
                    ta = a * KS * HW
                    acc_ks(gq, qc + lo * W, gl, ta + lo * W, HW,
                           kb, kc + (lo - R + a) * W, HW, (hi - lo) * W)
                    for i in range(R):
                        acc_ks(gq, qc + i * W, gl, ta + i * W, HW, kb, kc + a * W, HW, W)
                    for i in range(H - R, H):
                        acc_ks(gq, qc + i * W, gl, ta + i * W, HW, kb, kc + (H - KS + a) * W, HW, W)
                    for b in range(KS):
                        tl = ta + b * HW
                        kr = kc + b * HW
                        _fma(gkb, kr + (lo - R + a) * W, gl, tl + lo * W, q, qc + lo * W,
                             (hi - lo) * W)
                        for i in range(R):
                            _fma(gkb, kr + a * W, gl, tl + i * W, q, qc + i * W, W)
                        for i in range(H - R, H):
                            _fma(gkb, kr + (H - KS + a) * W, gl, tl + i * W, q, qc + i * W, W)
            _fill(gk, base, ZERO, D * HW)
            _fill(gv, base, ZERO, D * HW)
            fold(gkb, gk, base, H, W)
            fold(gvb, gv, base, H, W)
