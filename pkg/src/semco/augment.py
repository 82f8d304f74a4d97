"""Weak (crop + flip) and strong (RandAugment-style) image perturbations.

Images are ``H x W x C`` float arrays in ``[0, 1]``.  Every random draw comes
from the generator passed in, and :func:`view_rng` derives an independent
generator per ``(run seed, sample id, step, view)`` so batches can be
augmented in any order with identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

WEAK, UNLABELED_WEAK, UNLABELED_STRONG = 0, 1, 2
PAD_FRACTION = 0.125


def view_rng(run_seed: int, sample_id: int, step: int, view: int) -> np.random.Generator:
    return np.random.default_rng([int(run_seed), int(sample_id), int(step), int(view)])


def _clip(img):
    return np.clip(img, 0.0, 1.0)


def _gray(img):
    if img.shape[2] == 1:
        return img
    w = np.array([0.299, 0.587, 0.114]) if img.shape[2] == 3 else np.full(img.shape[2], 1 / img.shape[2])
    return (img @ w)[..., None] * np.ones(img.shape[2])


def _blend(degenerate, img, factor):
    return _clip(degenerate + factor * (img - degenerate))


def _affine(img, matrix):
    """Resample with a 2x2 output->input map about the image centre, reflect padding."""
    H, W, _ = img.shape
    full = np.eye(3)
    full[:2, :2] = matrix
    centre = np.array([(H - 1) / 2, (W - 1) / 2, 0.0])
    offset = centre - full @ centre
    return _clip(ndimage.affine_transform(img, full, offset=offset, order=1, mode="reflect"))


def _shift(img, dy, dx):
    H, W, _ = img.shape
    full = np.eye(3)
    return _clip(ndimage.affine_transform(img, full, offset=(dy, dx, 0), order=1, mode="reflect"))


# --- catalogue -------------------------------------------------------------
# Each op takes (img, level in [0, 1], sign in {-1, +1}).


def autocontrast(img, level=0.0, sign=1):
    lo = img.min(axis=(0, 1), keepdims=True)
    hi = img.max(axis=(0, 1), keepdims=True)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.where(hi > lo, (img - lo) / span, img)


def brightness(img, level, sign=1):
    return _blend(np.zeros_like(img), img, 1.0 + sign * 0.9 * level)


def color(img, level, sign=1):
    return _blend(_gray(img), img, 1.0 + sign * 0.9 * level)


def contrast(img, level, sign=1):
    mean = _gray(img).mean(axis=(0, 1), keepdims=True)
    return _blend(np.broadcast_to(mean, img.shape), img, 1.0 + sign * 0.9 * level)


def equalize(img, level=0.0, sign=1):
    out = np.empty_like(img)
    q = np.round(img * 255).astype(np.int64)
    for c in range(img.shape[2]):
        hist = np.bincount(q[..., c].ravel(), minlength=256)
        cdf = np.cumsum(hist)
        nz = cdf[hist > 0]
        lo = nz[0] if len(nz) else 0
        denom = cdf[-1] - lo
        lut = np.clip((cdf - lo) / denom, 0, 1) if denom > 0 else np.arange(256) / 255.0
        out[..., c] = lut[q[..., c]]
    return out


def posterize(img, level, sign=1):
    bits = 8 - int(round(4 * level))
    shift = 8 - bits
    q = np.round(img * 255).astype(np.int64)
    return ((q >> shift) << shift) / 255.0


def rotate(img, level, sign=1):
    theta = np.deg2rad(sign * 30.0 * level)
    c, s = np.cos(theta), np.sin(theta)
    return _affine(img, np.array([[c, -s], [s, c]]))


def sharpness(img, level, sign=1):
    kernel = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=np.float64) / 13.0
    smooth = np.stack(
        [ndimage.convolve(img[..., c], kernel, mode="nearest") for c in range(img.shape[2])], axis=2
    )
    return _blend(smooth, img, 1.0 + sign * 0.9 * level)


def shear_x(img, level, sign=1):
    return _affine(img, np.array([[1.0, 0.0], [sign * 0.3 * level, 1.0]]))


def shear_y(img, level, sign=1):
    return _affine(img, np.array([[1.0, sign * 0.3 * level], [0.0, 1.0]]))


def solarize(img, level, sign=1, threshold=None):
    """Invert pixels at or above ``threshold`` (default ``1 - level``)."""
    t = 1.0 - level if threshold is None else threshold
    return np.where(img >= t, 1.0 - img, img)


def translate_x(img, level, sign=1):
    return _shift(img, 0.0, sign * 0.3 * level * img.shape[1])


def translate_y(img, level, sign=1):
    return _shift(img, sign * 0.3 * level * img.shape[0], 0.0)


CATALOG: dict[str, Callable] = {
    "autocontrast": autocontrast,
    "brightness": brightness,
    "color": color,
    "contrast": contrast,
    "equalize": equalize,
    "posterize": posterize,
    "rotate": rotate,
    "sharpness": sharpness,
    "shear_x": shear_x,
    "shear_y": shear_y,
    "solarize": solarize,
    "translate_x": translate_x,
    "translate_y": translate_y,
}
OP_NAMES = tuple(CATALOG)


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str = "weak"
    n_ops: int = 2
    magnitude: int = 10
    cutout: bool = False

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0 <= self.magnitude <= 10 or self.n_ops < 0:
            raise ValueError("magnitude must lie in 0..10 and n_ops must be >= 0")


def crop_flip(img, dy: int, dx: int, flip: bool):
    """Reflect-pad, crop at offset ``(dy, dx)`` from centre, optionally mirror."""
    H, W, _ = img.shape
    pad = int(round(PAD_FRACTION * H)), int(round(PAD_FRACTION * W))
    padded = np.pad(img, ((pad[0], pad[0]), (pad[1], pad[1]), (0, 0)), mode="reflect")
    out = padded[pad[0] + dy : pad[0] + dy + H, pad[1] + dx : pad[1] + dx + W]
    return out[:, ::-1] if flip else out


def weak_augment(img, rng: np.random.Generator):
    img = np.asarray(img, dtype=np.float64)
    H, W, _ = img.shape
    py, px = int(round(PAD_FRACTION * H)), int(round(PAD_FRACTION * W))
    dy = int(rng.integers(-py, py + 1))
    dx = int(rng.integers(-px, px + 1))
    flip = bool(rng.random() < 0.5)
    return np.ascontiguousarray(crop_flip(img, dy, dx, flip))


def cutout(img, rng, size_fraction=0.5):
    H, W, _ = img.shape
    h, w = max(1, int(H * size_fraction)), max(1, int(W * size_fraction))
    y, x = int(rng.integers(0, H)), int(rng.integers(0, W))
    out = img.copy()
    out[max(0, y - h // 2) : y + (h + 1) // 2, max(0, x - w // 2) : x + (w + 1) // 2] = 0.5
    return out


def strong_augment(img, rng: np.random.Generator, n_ops=2, magnitude=10, use_cutout=False):
    """Apply ``n_ops`` ops drawn with replacement, each at a level drawn in ``[0, magnitude]``."""
    img = np.asarray(img, dtype=np.float64)
    for idx in rng.integers(0, len(OP_NAMES), size=n_ops):
        level = rng.uniform(0.0, magnitude) / 10.0
        sign = 1 if rng.random() < 0.5 else -1
        img = _clip(CATALOG[OP_NAMES[idx]](img, level, sign))
    if use_cutout:
        img = cutout(img, rng)
    return weak_augment(img, rng)


def apply_policy(img, rng, policy: AugmentPolicy):
    if policy.kind == "weak":
        return weak_augment(img, rng)
    return strong_augment(img, rng, policy.n_ops, policy.magnitude, policy.cutout)


def augment_batch(images, sample_ids, step, run_seed, view, policy: AugmentPolicy):
    return np.stack(
        [
            apply_policy(img, view_rng(run_seed, sid, step, view), policy)
            for img, sid in zip(images, sample_ids)
        ]
    )
