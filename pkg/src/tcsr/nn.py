"""Neural-network building blocks with hand-written backward passes.

Each op ``f`` has a companion ``f_vjp`` returning ``(out, pullback)``.
All tensors use the (batch, height, width, channel) layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels


class ConvParams(NamedTuple):
    weight: np.ndarray  # (kh, kw, c_in, c_out)
    bias: np.ndarray    # (c_out,)


# 3x3 neighbourhood minus the centre, row-major.  Checkpoints depend on this order.
DEFAULT_DIRECTIONS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


@dataclass(frozen=True)
class ShiftSpec:
    """Channel-group translation pattern.

    Group ``g`` (channels ``[g*c/N, (g+1)*c/N)``) moves by ``directions[g]``
    (rows, cols) pixels: content at ``(i, j)`` lands on ``(i+dy, j+dx)``.
    By default the directions are the eight unit offsets scaled by ``stride``.
    """

    groups: int = 8
    stride: int = 1
    directions: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if not self.directions:
            if self.groups != 8:
                raise ValueError("explicit directions are required unless groups == 8")
            dirs = tuple((dy * self.stride, dx * self.stride) for dy, dx in DEFAULT_DIRECTIONS)
            object.__setattr__(self, "directions", dirs)
        dirs = tuple((int(dy), int(dx)) for dy, dx in self.directions)
        object.__setattr__(self, "directions", dirs)
        if len(dirs) != self.groups:
            raise ValueError(f"{len(dirs)} directions for {self.groups} groups")
        if any(abs(dy) > self.stride or abs(dx) > self.stride for dy, dx in dirs):
            raise ValueError("shift offsets must not exceed the stride")

    def check_channels(self, c: int) -> None:
        if c % self.groups:
            raise ValueError(f"{c} channels cannot be split into {self.groups} shift groups")


# ---------------------------------------------------------------------------
# convolution

def _check_conv(x, weight, bias):
    if x.ndim != 4:
        raise ValueError(f"expected (n, h, w, c) input, got shape {x.shape}")
    kh, kw, cin, cout = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("only odd kernel sizes are supported")
    if x.shape[-1] != cin:
        raise ValueError(f"input has {x.shape[-1]} channels, weight expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError("bias shape does not match output channels")
    return kh, kw, cin, cout


def _im2col(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # n, h, w, c, kh, kw
    n, h, w = x.shape[:3]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * w, -1)


def conv2d_same_vjp(x, weight, bias=None):
    kh, kw, cin, cout = _check_conv(x, weight, bias)
    n, h, w, _ = x.shape
    cols = _im2col(x, kh, kw)
    wmat = weight.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if bias is not None:
        out += bias
    out = out.reshape(n, h, w, cout)

    def pullback(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(weight.shape)
        gb = g2.sum(axis=0) if bias is not None else None
        gcols = (g2 @ wmat.T).reshape(n, h, w, kh, kw, cin)
        ph, pw = kh // 2, kw // 2
        gxp = np.zeros((n, h + 2 * ph, w + 2 * pw, cin), dtype=g.dtype)
        for a in range(kh):
            for b in range(kw):
                gxp[:, a:a + h, b:b + w] += gcols[:, :, :, a, b]
        return gxp[:, ph:ph + h, pw:pw + w], gw, gb

    return out, pullback


def conv2d_same(x, weight, bias=None):
    """Stride-1 convolution with zero padding that keeps the spatial size."""
    return conv2d_same_vjp(x, weight, bias)[0]


# ---------------------------------------------------------------------------
# per-position affine maps

def linear_vjp(x, weight, bias=None):
    cin, cout = weight.shape
    if x.shape[-1] != cin:
        raise ValueError(f"trailing dim {x.shape[-1]} != {cin}")
    lead = x.shape[:-1]
    x2 = x.reshape(-1, cin)
    out = x2 @ weight
    if bias is not None:
        out += bias

    def pullback(g):
        g2 = g.reshape(-1, cout)
        gx = (g2 @ weight.T).reshape(*lead, cin)
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    return out.reshape(*lead, cout), pullback


def linear(x, weight, bias=None):
    return linear_vjp(x, weight, bias)[0]


def layernorm_vjp(x, gamma, beta, *, eps=1e-5):
    c = x.shape[-1]
    x2 = np.ascontiguousarray(x).reshape(-1, c)
    out = np.empty_like(x2)
    xhat = np.empty_like(x2)
    inv = np.empty(x2.shape[0], dtype=x2.dtype)
    _kernels.layernorm_forward(x2, gamma.astype(x2.dtype, copy=False), beta.astype(x2.dtype, copy=False),
                               x2.dtype.type(eps), out, xhat, inv)

    def pullback(g):
        g2 = np.ascontiguousarray(g, dtype=x2.dtype).reshape(-1, c)
        gx = np.empty_like(g2)
        ggamma = np.zeros(c, dtype=x2.dtype)
        gbeta = np.zeros(c, dtype=x2.dtype)
        _kernels.layernorm_backward(g2, xhat, inv, gamma.astype(x2.dtype, copy=False), gx, ggamma, gbeta)
        return gx.reshape(x.shape), ggamma, gbeta

    return out.reshape(x.shape), pullback


def layernorm(x, gamma, beta, eps=1e-5):
    return layernorm_vjp(x, gamma, beta, eps=eps)[0]


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu_vjp(x):
    # x*x*x, not x**3: numpy's integer power goes through pow() and is ~40x slower
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + _GELU_A * x2))
    half = 0.5 * (1.0 + t)
    out = x * half

    def pullback(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * (half + 0.5 * x * (1.0 - t * t) * dinner),)

    return out, pullback


def gelu(x):
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    return gelu_vjp(x)[0]


# ---------------------------------------------------------------------------
# data movement

def pixelshuffle(x, r: int):
    """(n, h, w, r*r*c) -> (n, r*h, r*w, c).

    Input channel ``ch*r*r + dy*r + dx`` becomes sub-pixel ``(dy, dx)`` of
    output channel ``ch``.
    """
    n, h, w, c = x.shape
    if c % (r * r):
        raise ValueError(f"{c} channels not divisible by {r * r}")
    co = c // (r * r)
    y = x.reshape(n, h, w, co, r, r).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y).reshape(n, h * r, w * r, co)


def pixel_unshuffle(y, r: int):
    n, hr, wr, co = y.shape
    if hr % r or wr % r:
        raise ValueError("spatial size not divisible by the scale")
    h, w = hr // r, wr // r
    x = y.reshape(n, h, r, w, r, co).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(x).reshape(n, h, w, co * r * r)


def pixelshuffle_vjp(x, *, r):
    return pixelshuffle(x, r), lambda g: (pixel_unshuffle(g, r),)


def _translate(src, dst, dy, dx):
    h, w = src.shape[1:3]
    if abs(dy) >= h or abs(dx) >= w:
        return
    dst[:, max(dy, 0):h + min(dy, 0), max(dx, 0):w + min(dx, 0)] = \
        src[:, max(-dy, 0):h + min(-dy, 0), max(-dx, 0):w + min(-dx, 0)]


def spatial_shift(x, spec: ShiftSpec = ShiftSpec()):
    """Translate each channel group by its direction, zero-filling the border."""
    c = x.shape[-1]
    spec.check_channels(c)
    size = c // spec.groups
    out = np.zeros_like(x)
    for g, (dy, dx) in enumerate(spec.directions):
        sl = slice(g * size, (g + 1) * size)
        _translate(x[..., sl], out[..., sl], dy, dx)
    return out


def spatial_shift_vjp(x, *, spec):
    reverse = ShiftSpec(spec.groups, spec.stride, tuple((-dy, -dx) for dy, dx in spec.directions))
    return spatial_shift(x, spec), lambda g: (spatial_shift(g, reverse),)


# ---------------------------------------------------------------------------
# feed-forward networks

def effn_vjp(x, w1, b1, w2, b2, *, spec: ShiftSpec | None = ShiftSpec()):
    """linear -> GELU -> spatial shift -> linear.  ``spec=None`` gives the plain FFN."""
    if spec is None:
        return _ffn_vjp(x, w1, b1, w2, b2)
    spec.check_channels(w1.shape[1])
    if x.ndim != 4:
        raise ValueError(f"expected (n, h, w, c) input, got shape {x.shape}")
    h1, pb1 = linear_vjp(x, w1, b1)
    dt = h1.dtype.type
    # GELU and the shift in two fused passes around numpy's vectorised tanh
    t = np.empty_like(h1)
    _kernels.gelu_inner(h1, dt(_GELU_C), dt(_GELU_A), t)
    np.tanh(t, out=t)
    dirs = np.array(spec.directions, dtype=np.int64)
    s = np.empty_like(h1)
    _kernels.gelu_shift_forward(h1, t, dirs, s)
    out, pb2 = linear_vjp(s, w2, b2)

    def pullback(g):
        gs, gw2, gb2 = pb2(g)
        gh1 = np.empty_like(h1)
        _kernels.gelu_shift_backward(np.ascontiguousarray(gs), h1, t, dirs, dt(_GELU_C), dt(_GELU_A), gh1)
        gx, gw1, gb1 = pb1(gh1)
        return gx, gw1, gb1, gw2, gb2

    return out, pullback


def _ffn_vjp(x, w1, b1, w2, b2):
    h1, pb1 = linear_vjp(x, w1, b1)
    a, pba = gelu_vjp(h1)
    out, pb2 = linear_vjp(a, w2, b2)

    def pullback(g):
        ga, gw2, gb2 = pb2(g)
        (gh1,) = pba(ga)
        gx, gw1, gb1 = pb1(gh1)
        return gx, gw1, gb1, gw2, gb2

    return out, pullback


def effn_forward(x, w1, b1, w2, b2, spec: ShiftSpec | None = ShiftSpec()):
    return effn_vjp(x, w1, b1, w2, b2, spec=spec)[0]


def ffn_param_count(c: int, hidden: int, bias: bool = True) -> int:
    return 2 * c * hidden + ((hidden + c) if bias else 0)


def effn_param_count(c: int, hidden: int, bias: bool = True) -> int:
    # the shift has no parameters
    return ffn_param_count(c, hidden, bias)
