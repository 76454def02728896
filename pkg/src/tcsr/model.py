"""The TCSR super-resolution network and its cost analyzer.

Pipeline: 3x3 conv (3 -> C) gives shallow features ``F_s``; a stack of NAT
blocks gives deep features ``F_d``; ``F_d + F_s`` goes through a 3x3 conv to
``scale**2 * 3`` channels and a pixelshuffle.

A NAT block is pre-norm residual::

    y = x + NA(LN(x))
    z = y + EFFN(LN(y))
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .autograd import GradTape, Var, add_vjp
from .na import NAParams, na_vjp
from .nn import (ShiftSpec, conv2d_same_vjp, effn_vjp, layernorm_vjp,
                 pixelshuffle_vjp)
from .tensor import as_tensor, default_dtype, rng_truncated_normal

NA_KEYS = ("wq", "wk", "wv", "wo", "bo", "rpb")
EFFN_KEYS = ("w1", "b1", "w2", "b2")
PROJECTION_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 64
    blocks: int = 16
    kernel: int = 11
    heads: int = 4
    ffn_ratio: int = 2
    shift_groups: int = 8
    shift_stride: int = 1
    use_shift: bool = True
    scale: int = 4
    variant: str = "B"

    def __post_init__(self):
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("kernel size must be a positive odd number")
        if self.blocks < 0 or self.channels < 1 or self.ffn_ratio < 1:
            raise ValueError("blocks, channels and ffn_ratio must be positive")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if self.use_shift and self.hidden % self.shift_groups:
            raise ValueError(f"hidden width {self.hidden} not divisible by "
                             f"{self.shift_groups} shift groups")

    @property
    def hidden(self) -> int:
        return self.ffn_ratio * self.channels

    @property
    def shift_spec(self) -> ShiftSpec | None:
        if not self.use_shift:
            return None
        return ShiftSpec(self.shift_groups, self.shift_stride)


REFERENCE_CONFIGS = {
    "tiny": ModelConfig(channels=32, blocks=8, kernel=7, heads=4, variant="tiny"),
    "B": ModelConfig(channels=64, blocks=16, kernel=11, heads=4, variant="B"),
    "L": ModelConfig(channels=64, blocks=32, kernel=11, heads=4, variant="L"),
}


def reference_config(name: str, **overrides) -> ModelConfig:
    return replace(REFERENCE_CONFIGS[name], **overrides)


@dataclass
class NATBlock:
    norm1: tuple[np.ndarray, np.ndarray]
    na: NAParams
    norm2: tuple[np.ndarray, np.ndarray]
    effn: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    spec: ShiftSpec | None = ShiftSpec()


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def block(self, b: int) -> NATBlock:
        p = self.params
        pre = f"blocks.{b}."
        na = NAParams(*(p[pre + "na." + k] for k in NA_KEYS),
                      heads=self.config.heads, kernel=self.config.kernel)
        return NATBlock((p[pre + "norm1.gamma"], p[pre + "norm1.beta"]), na,
                        (p[pre + "norm2.gamma"], p[pre + "norm2.beta"]),
                        tuple(p[pre + "effn." + k] for k in EFFN_KEYS),
                        self.config.shift_spec)

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    def astype(self, dtype) -> "Model":
        return Model(self.config, {k: v.astype(dtype) for k, v in self.params.items()})


def init_model(config: ModelConfig, seed: int = 0, dtype=None) -> Model:
    """Projections: truncated normal (std 0.02).  Convs: truncated normal with
    std 1/sqrt(fan_in).  Biases, bias tables: 0.  Norm gains: 1."""
    dtype = np.dtype(dtype or default_dtype())
    c, hid, r = config.channels, config.hidden, config.scale
    params: dict[str, np.ndarray] = {}
    stream = 0

    def normal(shape, std):
        nonlocal stream
        stream += 1
        return rng_truncated_normal(shape, std, seed, stream, dtype=dtype)

    def zeros(shape):
        return as_tensor(np.zeros(shape), dtype)

    params["shallow.weight"] = normal((3, 3, 3, c), 1.0 / np.sqrt(27))
    params["shallow.bias"] = zeros(c)
    for b in range(config.blocks):
        pre = f"blocks.{b}."
        for norm in ("norm1", "norm2"):
            params[pre + norm + ".gamma"] = as_tensor(np.ones(c), dtype)
            params[pre + norm + ".beta"] = zeros(c)
        for k in ("wq", "wk", "wv", "wo"):
            params[pre + "na." + k] = normal((c, c), PROJECTION_STD)
        params[pre + "na.bo"] = zeros(c)
        params[pre + "na.rpb"] = zeros((config.heads, 2 * config.kernel - 1, 2 * config.kernel - 1))
        params[pre + "effn.w1"] = normal((c, hid), PROJECTION_STD)
        params[pre + "effn.b1"] = zeros(hid)
        params[pre + "effn.w2"] = normal((hid, c), PROJECTION_STD)
        params[pre + "effn.b2"] = zeros(c)
    params["recon.weight"] = normal((3, 3, c, 3 * r * r), 1.0 / np.sqrt(9 * c))
    params["recon.bias"] = zeros(3 * r * r)
    return Model(config, params)


# ---------------------------------------------------------------------------
# forward graph

def _nat_block(tape: GradTape, x: Var, P: dict[str, Var], pre: str, cfg: ModelConfig) -> Var:
    n1 = tape.apply(layernorm_vjp, x, P[pre + "norm1.gamma"], P[pre + "norm1.beta"])
    a = tape.apply(na_vjp, n1, *(P[pre + "na." + k] for k in NA_KEYS),
                   heads=cfg.heads, kernel=cfg.kernel)
    y = tape.apply(add_vjp, x, a)
    n2 = tape.apply(layernorm_vjp, y, P[pre + "norm2.gamma"], P[pre + "norm2.beta"])
    f = tape.apply(effn_vjp, n2, *(P[pre + "effn." + k] for k in EFFN_KEYS), spec=cfg.shift_spec)
    return tape.apply(add_vjp, y, f)


def build_graph(tape: GradTape, lr: Var, P: dict[str, Var], cfg: ModelConfig):
    """Record the whole network on ``tape``; returns ``(sr, shallow, deep)``."""
    fs = tape.apply(conv2d_same_vjp, lr, P["shallow.weight"], P["shallow.bias"])
    x = fs
    for b in range(cfg.blocks):
        x = _nat_block(tape, x, P, f"blocks.{b}.", cfg)
    fd = x
    feat = tape.apply(add_vjp, fd, fs)
    up = tape.apply(conv2d_same_vjp, feat, P["recon.weight"], P["recon.bias"])
    sr = tape.apply(pixelshuffle_vjp, up, r=cfg.scale)
    return sr, fs, fd


def _check_input(lr, cfg):
    if lr.ndim != 4 or lr.shape[-1] != 3:
        raise ValueError(f"expected (n, h, w, 3) image batch, got {lr.shape}")
    if cfg.blocks and min(lr.shape[1:3]) < cfg.kernel:
        raise ValueError(f"image {lr.shape[1]}x{lr.shape[2]} smaller than kernel {cfg.kernel}")


def deep_features(lr: np.ndarray, model: Model):
    """``(F_s, F_d)`` for an input batch."""
    _check_input(lr, model.config)
    tape = GradTape(enabled=False)
    P = {k: tape.watch(v, k) for k, v in model.params.items()}
    _, fs, fd = build_graph(tape, tape.watch(lr.astype(model.params["shallow.weight"].dtype)), P,
                            model.config)
    return fs.value, fd.value


def tcsr_forward(lr: np.ndarray, model: Model, clamp: bool = False) -> np.ndarray:
    """Super-resolve a ``(n, h, w, 3)`` batch to ``(n, scale*h, scale*w, 3)``."""
    _check_input(lr, model.config)
    dtype = model.params["shallow.weight"].dtype
    tape = GradTape(enabled=False)
    P = {k: tape.watch(v, k) for k, v in model.params.items()}
    sr, _, _ = build_graph(tape, tape.watch(np.ascontiguousarray(lr, dtype=dtype)), P, model.config)
    out = sr.value
    return np.clip(out, 0.0, 1.0) if clamp else out


def nat_block_vjp(x, gamma1, beta1, wq, wk, wv, wo, bo, rpb, gamma2, beta2, w1, b1, w2, b2,
                  *, heads: int, kernel: int, spec: ShiftSpec | None = ShiftSpec()):
    tape = GradTape()
    names = ("x", "norm1.gamma", "norm1.beta", *("na." + k for k in NA_KEYS),
             "norm2.gamma", "norm2.beta", *("effn." + k for k in EFFN_KEYS))
    values = (x, gamma1, beta1, wq, wk, wv, wo, bo, rpb, gamma2, beta2, w1, b1, w2, b2)
    vars_ = {n: tape.watch(v, n) for n, v in zip(names, values)}
    cfg = _BlockCfg(heads, kernel, spec)
    out = _nat_block(tape, vars_["x"], {"b." + k: v for k, v in vars_.items()}, "b.", cfg)

    def pullback(g):
        tape.backward(out, g)
        return tuple(vars_[n].grad for n in names)

    return out.value, pullback


@dataclass(frozen=True)
class _BlockCfg:
    heads: int
    kernel: int
    shift_spec: ShiftSpec | None


def nat_block_forward(x: np.ndarray, block: NATBlock) -> np.ndarray:
    return nat_block_vjp(x, *block.norm1, *block.na.arrays(), *block.norm2, *block.effn,
                         heads=block.na.heads, kernel=block.na.kernel, spec=block.spec)[0]


def zero_branch_terminals(model: Model) -> Model:
    """Copy of ``model`` with the last layer of every residual branch set to zero
    (NA output projection, EFFN second linear, reconstruction conv)."""
    m = model.copy()
    for name, v in m.params.items():
        if name.endswith(("na.wo", "na.bo", "effn.w2", "effn.b2")) or name.startswith("recon."):
            v[...] = 0
    return m


# ---------------------------------------------------------------------------
# cost model

def estimate_flops(kind: str, h: int, w: int, c: int, k: int = 1, *,
                   c_out: int | None = None, ratio: int = 2) -> int:
    """Multiply-accumulate counts.

    ``conv``: ``H W C_in C_out K^2`` (``C_out = C`` by default).
    ``na`` / ``swin``: ``3 H W C^2 + 2 H W C K^2`` (QKV projections plus the
    windowed products, single head, output projection excluded).
    ``linear``: ``H W C C_out``.  ``ffn`` / ``effn``: two linears through a
    ``ratio * C`` hidden layer; the shift itself costs nothing.
    """
    if min(h, w, c, k) < 1:
        raise ValueError("dimensions must be positive")
    hw = h * w
    if kind == "conv":
        return hw * c * (c if c_out is None else c_out) * k * k
    if kind in ("na", "swin"):
        return 3 * hw * c * c + 2 * hw * c * k * k
    if kind == "linear":
        return hw * c * (c if c_out is None else c_out)
    if kind in ("ffn", "effn"):
        return 2 * hw * c * (ratio * c)
    if kind in ("shift", "pixelshuffle", "layernorm"):
        return 0
    raise ValueError(f"unknown module kind {kind!r}")


def conv_param_count(c_in: int, c_out: int, k: int, bias: bool = True) -> int:
    return c_in * c_out * k * k + (c_out if bias else 0)


@dataclass
class CostEntry:
    name: str
    params: int
    flops: int


@dataclass
class CostReport:
    entries: list[CostEntry]
    height: int
    width: int

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    def get(self, name: str) -> CostEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_text(self) -> str:
        width = max([len(e.name) for e in self.entries] + [5])
        lines = [f"{'layer':<{width}}  {'params':>12}  {'MACs':>16}"]
        for e in self.entries:
            lines.append(f"{e.name:<{width}}  {e.params:>12,d}  {e.flops:>16,d}")
        lines.append(f"{'total':<{width}}  {self.total_params:>12,d}  {self.total_flops:>16,d}")
        lines.append(f"(MACs for a {self.height}x{self.width} input; "
                     "NA biases: output projection only, bias table per block)")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["layer", "params", "flops"])
        for e in self.entries:
            wr.writerow([e.name, e.params, e.flops])
        wr.writerow(["total", self.total_params, self.total_flops])
        return buf.getvalue()


def _layer_of(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "blocks":
        return ".".join(parts[:3])
    return parts[0]


def count_params(model: Model, height: int = 64, width: int = 64) -> CostReport:
    """Itemised learnable-scalar counts (exact, from the arrays) and MAC estimates."""
    cfg = model.config
    sizes: dict[str, int] = {}
    for name, v in model.params.items():
        layer = _layer_of(name)
        sizes[layer] = sizes.get(layer, 0) + int(v.size)
    c, h, w = cfg.channels, height, width

    def flops(layer: str) -> int:
        kind = layer.rsplit(".", 1)[-1]
        if layer == "shallow":
            return estimate_flops("conv", h, w, 3, 3, c_out=c)
        if layer == "recon":
            return estimate_flops("conv", h, w, c, 3, c_out=3 * cfg.scale ** 2)
        if kind == "na":
            # windowed-attention formula plus the output projection
            return estimate_flops("na", h, w, c, cfg.kernel) + estimate_flops("linear", h, w, c)
        if kind == "effn":
            return estimate_flops("effn" if cfg.use_shift else "ffn", h, w, c, ratio=cfg.ffn_ratio)
        return 0

    entries = [CostEntry(layer, n, flops(layer)) for layer, n in sizes.items()]
    return CostReport(entries, height, width)
