"""PSNR and SSIM.

Both act on whatever array they are given; super-resolution evaluation
converts to the luma channel and crops the border first (see
:func:`tcsr.train.evaluate`).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 100.0  # dB, returned for identical inputs


def _crop(x, crop):
    if crop < 0:
        raise ValueError("crop must be non-negative")
    if crop:
        x = x[crop:-crop, crop:-crop]
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError("nothing left after border crop")
    return x


def psnr(a, b, crop: int = 0, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` after removing ``crop`` pixels per side; capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim < 2:
        raise ValueError("expected an image")
    d = _crop(a, crop) - _crop(b, crop)
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    # separable 'valid' correlation with a symmetric 1-D window
    x = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(x, g.size, axis=1) @ g


def ssim(a, b, crop: int = 0, peak: float = 1.0, size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean structural similarity of two single-channel images.

    Gaussian-weighted local statistics (``size`` x ``size``, ``sigma``) over
    window positions that fit entirely inside the image.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3 and a.shape[2] == 1:
        a, b = a[..., 0], b[..., 0]
    if a.ndim != 2:
        raise ValueError(f"expected a single-channel image, got {a.shape}")
    a, b = _crop(a, crop), _crop(b, crop)
    if min(a.shape) < size:
        raise ValueError(f"image {a.shape} smaller than the {size}x{size} window")
    g = gaussian_window(size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    # same expression for all three second moments, so ssim(x, x) is exactly 1
    s_aa = _filter_valid(a * a, g) - mu_a * mu_a
    s_bb = _filter_valid(b * b, g) - mu_b * mu_b
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))
