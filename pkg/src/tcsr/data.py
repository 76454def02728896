"""Image I/O, bicubic degradation and training-patch sampling.

Images are float arrays ``(h, w, 3)`` with values in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .tensor import rng_generator

IMAGE_SUFFIXES = (".png",)


# ---------------------------------------------------------------------------
# PNG files

def load_image(path) -> np.ndarray:
    """Read a PNG as float64 RGB in [0, 1].

    8- and 16-bit files are normalised by their own maximum (255 or 65535);
    grey images are replicated to three channels and alpha is dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"cannot decode image: {path}")
    if raw.dtype == np.uint8:
        img = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        img = raw.astype(np.float64) / 65535.0
    else:
        raise ValueError(f"unsupported sample type {raw.dtype} in {path}")
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    elif img.shape[2] == 4:
        img = img[:, :, 2::-1]
    elif img.shape[2] == 3:
        img = img[:, :, ::-1]
    else:
        raise ValueError(f"unsupported channel count {img.shape[2]} in {path}")
    return np.ascontiguousarray(img)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    """Write an ``(h, w, 3)`` float image as an 8-bit RGB PNG."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {img.shape}")
    path = Path(path)
    if not cv2.imwrite(str(path), to_uint8(img)[:, :, ::-1]):
        raise OSError(f"cannot write image: {path}")


def list_images(folder) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"no such directory: {folder}")
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_folder(folder) -> list[np.ndarray]:
    paths = list_images(folder)
    if not paths:
        raise ValueError(f"no PNG images in {folder}")
    return [load_image(p) for p in paths]


# ---------------------------------------------------------------------------
# bicubic resampling

def cubic(x, a: float = -0.5):
    """Keys cubic convolution kernel, support [-2, 2]."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    far = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def resize_weights(n_in: int, n_out: int, antialias: bool = True):
    """Tap indices and weights ``(n_out, taps)`` for resampling one axis.

    Sample ``i`` of the output sits at input coordinate
    ``(i + 0.5) * n_in / n_out - 0.5`` (pixel centres aligned).  When
    shrinking, the kernel is stretched by ``1/scale`` so it also low-passes.
    Indices past the border are clamped to the edge pixel.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be positive")
    scale = n_out / n_in
    stretch = antialias and scale < 1.0
    width = 4.0 / scale if stretch else 4.0
    u = (np.arange(n_out) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2.0).astype(np.int64)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    w = scale * cubic(scale * dist) if stretch else cubic(dist)
    w = w / w.sum(axis=1, keepdims=True)
    # absorb rounding into the last tap so the left-to-right sum is exactly 1
    head = np.zeros(n_out)
    for t in range(taps - 1):
        head = head + w[:, t]
    w[:, -1] = 1.0 - head
    return np.clip(idx, 0, n_in - 1), w


def _resize_axis(x, axis, n_out, antialias):
    idx, w = resize_weights(x.shape[axis], n_out, antialias)
    shape = [1] * x.ndim
    shape[axis] = n_out
    out = np.zeros(x.shape[:axis] + (n_out,) + x.shape[axis + 1:], dtype=np.float64)
    # fixed tap order: results do not depend on a BLAS reduction order
    for t in range(idx.shape[1]):
        out += w[:, t].reshape(shape) * np.take(x, idx[:, t], axis=axis)
    return out


def bicubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Resize ``(..., h, w, c)`` to ``(..., out_h, out_w, c)``, rows first then columns."""
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be positive")
    img = np.asarray(img)
    if img.ndim < 3:
        raise ValueError(f"expected (..., h, w, c) image, got {img.shape}")
    dtype = img.dtype if img.dtype.kind == "f" else np.float64
    x = img.astype(np.float64)
    x = _resize_axis(x, x.ndim - 3, out_h, antialias)
    x = _resize_axis(x, x.ndim - 2, out_w, antialias)
    return x.astype(dtype, copy=False)


def downscale(img: np.ndarray, scale: int) -> np.ndarray:
    """Bicubic ``1/scale`` reduction; the image is first cropped to a multiple of ``scale``."""
    h, w = img.shape[-3] // scale * scale, img.shape[-2] // scale * scale
    img = img[..., :h, :w, :]
    return bicubic_resize(img, h // scale, w // scale)


def modcrop(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-3] // scale * scale, img.shape[-2] // scale * scale
    return img[..., :h, :w, :]


# ---------------------------------------------------------------------------
# colour

def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """BT.601 luma on [0, 1] RGB; output keeps a trailing axis of size 1, values in [16/255, 235/255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] != 3:
        raise ValueError(f"expected trailing RGB axis, got {img.shape}")
    y = (65.481 * img[..., 0] + 128.553 * img[..., 1] + 24.966 * img[..., 2] + 16.0) / 255.0
    return y[..., None]


# ---------------------------------------------------------------------------
# patches

def augment(img: np.ndarray, hflip: bool, vflip: bool, rot: int) -> np.ndarray:
    if hflip:
        img = img[:, ::-1]
    if vflip:
        img = img[::-1]
    return np.rot90(img, rot, axes=(0, 1))


@dataclass
class PatchSampler:
    """Random (LR, HR) training pairs.

    Each batch is drawn from its own Philox stream keyed by ``(seed, step)``,
    so batch ``s`` is the same whether or not earlier batches were drawn.
    With ``lr_images`` the LR patch is cropped from the matching pre-made
    image instead of being computed by bicubic reduction.
    """

    images: list
    patch: int
    scale: int
    batch: int
    seed: int = 0
    augment: bool = True
    lr_images: list | None = None
    dtype: np.dtype = np.dtype(np.float32)

    STREAM_BASE = 1 << 40

    def __post_init__(self):
        if self.patch < 1 or self.batch < 1 or self.scale < 1:
            raise ValueError("patch, batch and scale must be positive")
        hp = self.patch * self.scale
        self._usable = [i for i, im in enumerate(self.images) if min(im.shape[:2]) >= hp]
        if not self._usable:
            raise ValueError(f"no training image is at least {hp}x{hp} pixels")
        if self.lr_images is not None and len(self.lr_images) != len(self.images):
            raise ValueError("LR and HR folders hold different numbers of images")

    def sample(self, step: int):
        """``(lr, hr)`` with shapes ``(batch, p, p, 3)`` and ``(batch, p*s, p*s, 3)``."""
        rng = rng_generator(self.seed, self.STREAM_BASE + step)
        p, s = self.patch, self.scale
        lrs, hrs = [], []
        for _ in range(self.batch):
            k = self._usable[int(rng.integers(len(self._usable)))]
            img = self.images[k]
            if self.lr_images is None:
                top = int(rng.integers(img.shape[0] - p * s + 1))
                left = int(rng.integers(img.shape[1] - p * s + 1))
            else:
                lr_img = self.lr_images[k]
                top = int(rng.integers(lr_img.shape[0] - p + 1)) * s
                left = int(rng.integers(lr_img.shape[1] - p + 1)) * s
            hflip, vflip, rot = (bool(rng.integers(2)), bool(rng.integers(2)), int(rng.integers(4)))
            hr = img[top:top + p * s, left:left + p * s]
            if self.lr_images is None:
                lr = bicubic_resize(hr, p, p)
            else:
                lr = self.lr_images[k][top // s:top // s + p, left // s:left // s + p]
            if self.augment:
                hr = augment(hr, hflip, vflip, rot)
                lr = augment(lr, hflip, vflip, rot)
            hrs.append(hr)
            lrs.append(lr)
        return (np.ascontiguousarray(np.stack(lrs), dtype=self.dtype),
                np.ascontiguousarray(np.stack(hrs), dtype=self.dtype))
