"""Training loop (L1 loss, Adam) and Y-channel evaluation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autograd import GradTape
from .data import (PatchSampler, bicubic_resize, downscale, load_folder, list_images,
                   modcrop, rgb_to_y)
from .metrics import psnr, ssim
from .model import Model, build_graph, tcsr_forward

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# loss and optimizer

def l1_loss_vjp(sr, hr):
    """Mean absolute difference.  The value is reduced in float64."""
    sr = np.asarray(sr)
    hr = np.asarray(hr)
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch {sr.shape} vs {hr.shape}")
    d = sr - hr
    n = d.size
    value = np.asarray(np.abs(d).sum(dtype=np.float64) / n)

    def pullback(g):
        gs = np.sign(d) * (np.asarray(g, dtype=np.float64) / n).astype(d.dtype)
        return gs, -gs

    return value, pullback


def l1_loss(sr, hr) -> float:
    return float(l1_loss_vjp(sr, hr)[0])


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    Every gradient is checked before anything is modified; a non-finite
    entry raises ``FloatingPointError`` and leaves the step undone.
    """
    for k, g in grads.items():
        if k not in params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        p, m, v = params[k], state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainConfig:
    patch: int = 64
    batch: int = 32
    lr: float = 2e-4
    steps: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_interval: int = 0
    augment: bool = True
    halve_every: float = 0.4  # fraction of total steps

    def __post_init__(self):
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.patch < 1 or self.steps < 0 or self.lr <= 0:
            raise ValueError("patch and lr must be positive, steps non-negative")

    def lr_at(self, step: int) -> float:
        """Learning rate for 0-based ``step``: halved every ``halve_every * steps`` steps."""
        period = max(1, int(round(self.halve_every * self.steps)))
        return self.lr * 0.5 ** (step // period)


@dataclass
class TrainResult:
    model: Model
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "lr"])
        for i, (loss, lr) in enumerate(zip(self.losses, self.lrs), 1):
            w.writerow([i, repr(loss), repr(lr)])
        return buf.getvalue()


def loss_and_grads(model: Model, lr_batch: np.ndarray, hr_batch: np.ndarray):
    """L1 loss of the model on one batch and the gradient of every parameter."""
    tape = GradTape()
    P = {k: tape.watch(v, k) for k, v in model.params.items()}
    sr, _, _ = build_graph(tape, tape.watch(lr_batch), P, model.config)
    loss = tape.apply(l1_loss_vjp, sr, tape.watch(hr_batch))
    tape.backward(loss, np.ones((), dtype=np.float64))
    return float(loss.value), {k: v.grad for k, v in P.items()}


def train_step(model: Model, state: AdamState, lr_batch, hr_batch, lr: float,
               config: TrainConfig | None = None) -> float:
    config = config or TrainConfig()
    loss, grads = loss_and_grads(model, lr_batch, hr_batch)
    if not math.isfinite(loss):
        raise FloatingPointError(f"loss is {loss} at step {state.step + 1}")
    adam_step(model.params, grads, state, lr, config.beta1, config.beta2, config.eps)
    return loss


def train(model: Model, config: TrainConfig, data, out=None, lr_data=None,
          curve=None, callback: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train ``model`` in place.

    ``data`` is a folder of HR PNGs or a list of images.  ``out`` receives a
    checkpoint every ``checkpoint_interval`` steps and at the end; ``curve``
    receives the ``step,loss,lr`` CSV.  Batches come from
    :class:`PatchSampler`, so the run is a pure function of the seed.
    """
    from .io import save_checkpoint

    images = load_folder(data) if isinstance(data, (str, Path)) else list(data)
    lr_images = load_folder(lr_data) if isinstance(lr_data, (str, Path)) else lr_data
    cfg = model.config
    if config.patch < cfg.kernel:
        raise ValueError(f"patch {config.patch} smaller than attention kernel {cfg.kernel}")
    dtype = model.params["shallow.weight"].dtype
    sampler = PatchSampler(images, config.patch, cfg.scale, config.batch, config.seed,
                           config.augment, lr_images, dtype)
    state = AdamState.zeros_like(model.params)
    result = TrainResult(model)

    def checkpoint():
        if out is not None:
            save_checkpoint(model, out, train_config=config, step=state.step)
        if curve is not None:
            Path(curve).write_text(result.curve_csv())

    for step in range(config.steps):
        lr_batch, hr_batch = sampler.sample(step)
        rate = config.lr_at(step)
        loss = train_step(model, state, lr_batch, hr_batch, rate, config)
        result.losses.append(loss)
        result.lrs.append(rate)
        if callback is not None:
            callback(step + 1, loss)
        if step % 50 == 0:
            log.info("step %d loss %.6f lr %.3g", step + 1, loss, rate)
        if config.checkpoint_interval and (step + 1) % config.checkpoint_interval == 0:
            checkpoint()
    checkpoint()
    return result


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalResult:
    names: list[str]
    psnr: list[float]
    ssim: list[float]
    scale: int

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def to_text(self) -> str:
        width = max([len("mean")] + [len(n) for n in self.names])
        rows = [f"{'image':<{width}}  {'PSNR(dB)':>9}  {'SSIM':>7}"]
        for n, p, s in zip(self.names, self.psnr, self.ssim):
            rows.append(f"{n:<{width}}  {p:9.3f}  {s:7.4f}")
        rows.append(f"{'mean':<{width}}  {self.mean_psnr:9.3f}  {self.mean_ssim:7.4f}")
        return "\n".join(rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image", "psnr", "ssim"])
        for row in zip(self.names, self.psnr, self.ssim):
            w.writerow(row)
        w.writerow(["mean", self.mean_psnr, self.mean_ssim])
        return buf.getvalue()


def score(sr: np.ndarray, hr: np.ndarray, scale: int) -> tuple[float, float]:
    """PSNR and SSIM on the luma channel with ``scale`` pixels cropped per side."""
    ys, yh = rgb_to_y(np.clip(sr, 0.0, 1.0)), rgb_to_y(hr)
    return psnr(ys, yh, crop=scale), ssim(ys, yh, crop=scale)


def super_resolve(lr: np.ndarray, model: Model, tile: int | None = None) -> np.ndarray:
    """One ``(h, w, 3)`` image; ``tile`` splits it into LR tiles with ``kernel`` pixels of context."""
    if not tile:
        return tcsr_forward(lr[None], model, clamp=True)[0]
    k, r = model.config.kernel, model.config.scale
    h, w = lr.shape[:2]
    if tile < k:
        raise ValueError(f"tile {tile} smaller than kernel {k}")
    out = np.empty((h * r, w * r, 3), dtype=model.params["shallow.weight"].dtype)
    for y0 in range(0, h, tile):
        for x0 in range(0, w, tile):
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            ya, xa = max(0, y0 - k), max(0, x0 - k)
            yb, xb = min(h, y1 + k), min(w, x1 + k)
            # context must still hold a full window
            ya, yb = (0, h) if yb - ya < k else (ya, yb)
            xa, xb = (0, w) if xb - xa < k else (xa, xb)
            sr = tcsr_forward(lr[None, ya:yb, xa:xb], model, clamp=True)[0]
            out[y0 * r:y1 * r, x0 * r:x1 * r] = sr[(y0 - ya) * r:(y1 - ya) * r,
                                                   (x0 - xa) * r:(x1 - xa) * r]
    return out


def evaluate(model: Model | None, hr_data, scale: int | None = None, lr_data=None,
             method: str = "model", tile: int | None = None) -> EvalResult:
    """Score super-resolved images against HR references.

    ``method`` is ``"model"``, ``"bicubic"`` (upsampling baseline) or
    ``"identity"`` (SR := HR; checks the scoring path).  LR inputs are
    bicubic reductions of the HR images unless ``lr_data`` is given.
    """
    if method not in ("model", "bicubic", "identity"):
        raise ValueError(f"unknown method {method!r}")
    if scale is None:
        if model is None:
            raise ValueError("scale is required without a model")
        scale = model.config.scale
    if model is not None and method == "model" and model.config.scale != scale:
        raise ValueError(f"checkpoint is for x{model.config.scale}, asked for x{scale}")
    if isinstance(hr_data, (str, Path)):
        names = [p.name for p in list_images(hr_data)]
        hrs = load_folder(hr_data)
    else:
        hrs = list(hr_data)
        names = [f"img{i:03d}" for i in range(len(hrs))]
    lrs = load_folder(lr_data) if isinstance(lr_data, (str, Path)) else lr_data
    result = EvalResult([], [], [], scale)
    for i, (name, hr) in enumerate(zip(names, hrs)):
        hr = modcrop(hr, scale)
        lr = downscale(hr, scale) if lrs is None else lrs[i]
        if lr.shape[0] * scale != hr.shape[0] or lr.shape[1] * scale != hr.shape[1]:
            raise ValueError(f"{name}: LR {lr.shape[:2]} does not match HR {hr.shape[:2]} at x{scale}")
        if method == "identity":
            sr = hr
        elif method == "bicubic":
            sr = bicubic_resize(lr, hr.shape[0], hr.shape[1])
        else:
            sr = super_resolve(lr.astype(model.params["shallow.weight"].dtype), model, tile)
        p, s = score(sr, hr, scale)
        result.names.append(name)
        result.psnr.append(p)
        result.ssim.append(s)
    if not result.names:
        raise ValueError("no images to evaluate")
    return result
