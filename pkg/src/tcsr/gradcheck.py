"""Finite-difference checks for every differentiable op, on small f64 instances."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .na import na_vjp
from .nn import (ShiftSpec, conv2d_same_vjp, effn_vjp, gelu_vjp, layernorm_vjp, linear_vjp,
                 pixelshuffle_vjp, spatial_shift_vjp)
from .train import l1_loss_vjp
from .verify import GradCheckReport, check_vjp

SEEDS = (0, 1, 2)


def _na(rng):
    n, h, w, c = 1, 5, 5, 4
    s = 1.0 / np.sqrt(c)
    inputs = {"x": rng.standard_normal((n, h, w, c))}
    for k in ("wq", "wk", "wv", "wo"):
        inputs[k] = rng.standard_normal((c, c)) * s * 2.0
    inputs["bo"] = rng.standard_normal(c)
    inputs["rpb"] = rng.standard_normal((2, 5, 5)) * 0.5
    return na_vjp, inputs, {"heads": 2, "kernel": 3}


def _conv(rng):
    return conv2d_same_vjp, {"x": rng.standard_normal((2, 5, 6, 3)),
                             "weight": rng.standard_normal((3, 3, 3, 4)),
                             "bias": rng.standard_normal(4)}, {}


def _linear(rng):
    return linear_vjp, {"x": rng.standard_normal((2, 3, 3, 5)),
                        "weight": rng.standard_normal((5, 4)),
                        "bias": rng.standard_normal(4)}, {}


def _layernorm(rng):
    return layernorm_vjp, {"x": rng.standard_normal((2, 3, 3, 6)),
                           "gamma": 1.0 + 0.3 * rng.standard_normal(6),
                           "beta": rng.standard_normal(6)}, {}


def _gelu(rng):
    return gelu_vjp, {"x": 2.0 * rng.standard_normal((2, 4, 4, 3))}, {}


def _pixelshuffle(rng):
    return pixelshuffle_vjp, {"x": rng.standard_normal((1, 3, 4, 12))}, {"r": 2}


def _shift(rng):
    return spatial_shift_vjp, {"x": rng.standard_normal((2, 4, 5, 16))}, {"spec": ShiftSpec()}


def _effn(rng):
    c, hid = 4, 16
    return effn_vjp, {"x": rng.standard_normal((1, 5, 5, c)),
                      "w1": rng.standard_normal((c, hid)) * 0.5,
                      "b1": rng.standard_normal(hid) * 0.5,
                      "w2": rng.standard_normal((hid, c)) * 0.5,
                      "b2": rng.standard_normal(c)}, {"spec": ShiftSpec()}


def _l1(rng):
    # keep |sr - hr| away from the kink at 0, where the derivative jumps
    hr = rng.standard_normal((2, 4, 4, 3))
    d = rng.uniform(0.05, 1.0, hr.shape) * rng.choice([-1.0, 1.0], hr.shape)
    return l1_loss_vjp, {"sr": hr + d, "hr": hr}, {}


OPS: dict[str, Callable] = {
    "na": _na,
    "conv2d_same": _conv,
    "linear": _linear,
    "layernorm": _layernorm,
    "gelu": _gelu,
    "pixelshuffle": _pixelshuffle,
    "spatial_shift": _shift,
    "effn": _effn,
    "l1_loss": _l1,
}


def run(op: str, seed: int, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    if op not in OPS:
        raise KeyError(f"unknown op {op!r}; choose from {', '.join(OPS)}")
    vjp, inputs, static = OPS[op](np.random.default_rng(seed))
    return check_vjp(op, vjp, inputs, seed, static, step=step, tol=tol)


def run_all(ops=None, seeds=SEEDS) -> list[GradCheckReport]:
    return [run(op, s) for op in (ops or OPS) for s in seeds]
