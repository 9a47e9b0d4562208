"""Lighting and weather corruptions."""
from __future__ import annotations

import numpy as np

from ..imagecore import SeededRng, as_image, clamp01
from .errors import CorruptionParamError


def brightness(image, beta: float) -> np.ndarray:
    img = as_image(image)
    if beta == 0:
        return clamp01(img)
    return clamp01(img + beta)


def contrast(image, alpha: float) -> np.ndarray:
    """Scale deviations from each channel's mean by ``alpha``."""
    img = as_image(image).astype(np.float64)
    if alpha < 0:
        raise CorruptionParamError(f"contrast: alpha={alpha} must be >= 0")
    if alpha == 1:
        return clamp01(img)
    mean = img.mean(axis=(0, 1), keepdims=True)
    if alpha == 0:
        return clamp01(np.broadcast_to(mean, img.shape).copy())
    return clamp01(mean + alpha * (img - mean))


def plasma(size: int, decay: float, rng: SeededRng) -> np.ndarray:
    """Periodic diamond-square height map on a ``size x size`` grid, in [0, 1].

    ``size`` must be a power of two. The random amplitude is divided by
    ``decay`` after every level; larger values give smoother fields.
    """
    if size < 2 or size & (size - 1):
        raise CorruptionParamError(f"plasma size {size} is not a power of two")
    grid = np.zeros((size, size))
    step = size
    amp = 1.0
    while step >= 2:
        half = step // 2
        corners = grid[0:size:step, 0:size:step]
        # square step: cell centers from the 4 surrounding corners (wrapping)
        acc = corners + np.roll(corners, -1, axis=0)
        acc = acc + np.roll(acc, -1, axis=1)
        grid[half:size:step, half:size:step] = acc / 4 + amp * rng.uniform(-1, 1, size=acc.shape)
        # diamond step: edge midpoints from their 4 axis neighbors
        centers = grid[half:size:step, half:size:step]
        corners = grid[0:size:step, 0:size:step]
        # midpoints on rows of corners (between corners horizontally)
        top = (corners + np.roll(corners, -1, axis=1) + centers + np.roll(centers, 1, axis=0)) / 4
        grid[0:size:step, half:size:step] = top + amp * rng.uniform(-1, 1, size=top.shape)
        # midpoints on columns of corners (between corners vertically)
        left = (corners + np.roll(corners, -1, axis=0) + centers + np.roll(centers, 1, axis=1)) / 4
        grid[half:size:step, 0:size:step] = left + amp * rng.uniform(-1, 1, size=left.shape)
        step = half
        amp /= decay
    lo, hi = grid.min(), grid.max()
    if hi - lo < 1e-12:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def fog(image, t: float, rng: SeededRng, decay: float = 2.0) -> np.ndarray:
    img = as_image(image).astype(np.float64)
    if not 0.0 <= t <= 1.0:
        raise CorruptionParamError(f"fog: t={t} must be in [0, 1]")
    if decay <= 1.0:
        raise CorruptionParamError(f"fog: decay={decay} must be > 1")
    if t == 0:
        return clamp01(img)
    h, w = img.shape[:2]
    size = 1 << max(1, int(np.ceil(np.log2(max(h, w)))))
    haze = plasma(size, decay, rng)[:h, :w, None]
    return clamp01((1.0 - t) * img + t * haze)
