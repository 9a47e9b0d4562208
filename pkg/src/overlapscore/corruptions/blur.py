"""Blur corruptions.

Convolutions replicate edge pixels (``mode="nearest"``). Kernels are
normalized to unit sum, so constant images pass through unchanged up to
floating point rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..imagecore import SeededRng, as_image, clamp01
from .errors import CorruptionParamError


@dataclass(frozen=True)
class Kernel:
    weights: np.ndarray

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise CorruptionParamError(f"kernel must be square with odd size, got {w.shape}")
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise CorruptionParamError("kernel weights must be nonnegative and sum to 1")

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def disk_kernel(radius: float) -> Kernel:
    if radius < 0:
        raise CorruptionParamError(f"defocus radius={radius} must be >= 0")
    half = int(math.ceil(radius))
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1]
    w = ((xx**2 + yy**2) <= radius**2 + 1e-12).astype(np.float64)
    return Kernel(w / w.sum())


def line_kernel(length: int, angle_deg: float) -> Kernel:
    """Rasterized centered segment of ``length`` pixels at ``angle_deg``."""
    if length < 1:
        raise CorruptionParamError(f"motion length={length} must be >= 1")
    half = length // 2
    size = 2 * half + 1
    w = np.zeros((size, size))
    theta = math.radians(angle_deg)
    # one sample per unit length along the segment, accumulated at the nearest pixel
    ts = np.arange(length) - (length - 1) / 2
    xs = np.floor(half + ts * math.cos(theta) + 0.5).astype(int)
    ys = np.floor(half - ts * math.sin(theta) + 0.5).astype(int)
    np.add.at(w, (ys, xs), 1.0)
    return Kernel(w / w.sum())


def convolve(image, kernel: Kernel) -> np.ndarray:
    img = as_image(image).astype(np.float64)
    if kernel.size == 1:
        return clamp01(img)
    if kernel.size > min(img.shape[:2]):
        raise CorruptionParamError(
            f"kernel size {kernel.size} exceeds image size {img.shape[:2]}"
        )
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.convolve(img[:, :, c], kernel.weights, mode="nearest")
    return clamp01(out)


def defocus_blur(image, radius: float) -> np.ndarray:
    return convolve(image, disk_kernel(radius))


def motion_blur(image, length: int, angle: float) -> np.ndarray:
    return convolve(image, line_kernel(int(length), angle))


def _center_zoom(img: np.ndarray, factor: float) -> np.ndarray:
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [cy + (yy - cy) / factor, cx + (xx - cx) / factor]
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        out[:, :, c] = ndimage.map_coordinates(img[:, :, c], coords, order=1, mode="nearest")
    return out


def zoom_blur(image, z_max: float, steps: int) -> np.ndarray:
    img = as_image(image).astype(np.float64)
    if z_max < 1 or steps < 1:
        raise CorruptionParamError(f"zoom_blur: need z_max >= 1 and steps >= 1, got {z_max}, {steps}")
    if z_max == 1:
        return clamp01(img)
    acc = np.zeros_like(img)
    for z in np.linspace(1.0, z_max, int(steps)):
        acc += img if z == 1.0 else _center_zoom(img, z)
    return clamp01(acc / steps)


def glass_blur(image, d: int, iterations: int, rng: SeededRng) -> np.ndarray:
    """Swap every pixel, in raster order, with a neighbor offset by U{-d..d}^2.

    Offsets that leave the image are clipped to the border. Only whole pixels
    move, so each channel keeps its exact multiset of values.
    """
    img = as_image(image)
    d = int(d)
    if d < 0 or iterations < 0:
        raise CorruptionParamError(f"glass_blur: need d >= 0 and iterations >= 0, got {d}, {iterations}")
    if d == 0 or iterations == 0:
        return clamp01(img)
    h, w, ch = img.shape
    n = h * w
    perm = list(range(n))
    rows = np.repeat(np.arange(h), w)
    cols = np.tile(np.arange(w), h)
    for _ in range(int(iterations)):
        offs = rng.integers(-d, d, size=(n, 2))
        ny = np.clip(rows + offs[:, 0], 0, h - 1)
        nx = np.clip(cols + offs[:, 1], 0, w - 1)
        partner = (ny * w + nx).tolist()
        for i, j in enumerate(partner):
            perm[i], perm[j] = perm[j], perm[i]
    flat = np.asarray(img, dtype=np.float64).reshape(n, ch)
    return clamp01(flat[np.asarray(perm)].reshape(h, w, ch))
