"""Desk-scale image folders built from the scikit-image sample pictures."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import skimage.data

from tcsr.data import save_image

TRAIN = ("rocket", "coins", "moon", "page", "text", "hubble_deep_field",
         "immunohistochemistry", "retina", "colorwheel", "brick", "grass", "gravel",
         "logo", "clock", "cell", "stereo_motorcycle")
HELD_OUT = ("astronaut", "coffee", "chelsea", "camera")


def _rgb(name: str) -> np.ndarray:
    img = getattr(skimage.data, name)()
    if isinstance(img, tuple):
        img = img[0]
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return img[:, :, :3].astype(np.float64) / 255.0


def _center(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    th, tw = min(h, size), min(w, size)
    y, x = (h - th) // 2, (w - tw) // 2
    return img[y:y + th, x:x + tw]


def write_folders(root, train_size: int = 384, eval_size: int = 192):
    """``(train_dir, heldout_dir)`` under ``root``; idempotent."""
    root = Path(root)
    train_dir, eval_dir = root / "train", root / "heldout"
    for folder, names, size in ((train_dir, TRAIN, train_size), (eval_dir, HELD_OUT, eval_size)):
        folder.mkdir(parents=True, exist_ok=True)
        for name in names:
            path = folder / f"{name}.png"
            if not path.exists():
                save_image(path, _center(_rgb(name), size))
    return train_dir, eval_dir
