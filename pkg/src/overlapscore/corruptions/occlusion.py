"""Occlusion corruptions: a constant frame (``border``) or square (``obstruction``).

Default geometry follows the 224-pixel ranges (thickness 10..45, square edge
50..120) rescaled to the image's shorter side.
"""
from __future__ import annotations

import math

import numpy as np

from ..imagecore import SeededRng, as_image
from .errors import CorruptionParamError

REFERENCE_SIDE = 224
BORDER_RANGE = (10, 45)
OBSTRUCTION_RANGE = (50, 120)


def scaled_range(bounds: tuple[int, int], min_side: int) -> tuple[int, int]:
    scale = min_side / REFERENCE_SIDE
    return tuple(int(math.floor(b * scale + 0.5)) for b in bounds)


def fill_border(image, thickness: int, value: float) -> np.ndarray:
    out = np.array(as_image(image), dtype=np.float64)
    t = int(thickness)
    if t <= 0:
        return out
    out[:t] = value
    out[-t:] = value
    out[:, :t] = value
    out[:, -t:] = value
    return out


def border(image, rng: SeededRng, t_min: int | None = None, t_max: int | None = None) -> np.ndarray:
    """Set every pixel within ``t ~ U{t_min..t_max}`` of an edge to ``v ~ U[0, 1)``."""
    img = as_image(image)
    side = min(img.shape[:2])
    lo, hi = scaled_range(BORDER_RANGE, side)
    t_min = lo if t_min is None else int(t_min)
    t_max = hi if t_max is None else int(t_max)
    if not 0 <= t_min <= t_max:
        raise CorruptionParamError(f"border: need 0 <= t_min <= t_max, got {t_min}, {t_max}")
    if 2 * t_max > side:
        raise CorruptionParamError(f"border: t_max={t_max} too thick for min side {side}")
    value = rng.uniform(0.0, 1.0)
    t = rng.integers(t_min, t_max)
    return np.clip(fill_border(img, t, value), 0.0, 1.0)


def obstruction(image, rng: SeededRng, e_min: int | None = None, e_max: int | None = None) -> np.ndarray:
    """Fill a uniformly placed ``e x e`` square (``e ~ U{e_min..e_max}``) with one value."""
    img = as_image(image)
    h, w = img.shape[:2]
    lo, hi = scaled_range(OBSTRUCTION_RANGE, min(h, w))
    e_min = lo if e_min is None else int(e_min)
    e_max = hi if e_max is None else int(e_max)
    if not 1 <= e_min <= e_max:
        raise CorruptionParamError(f"obstruction: need 1 <= e_min <= e_max, got {e_min}, {e_max}")
    if e_max > min(h, w):
        raise CorruptionParamError(f"obstruction: e_max={e_max} exceeds min side {min(h, w)}")
    value = rng.uniform(0.0, 1.0)
    e = rng.integers(e_min, e_max)
    y = rng.integers(0, h - e)
    x = rng.integers(0, w - e)
    out = np.array(img, dtype=np.float64)
    out[y : y + e, x : x + e] = value
    return np.clip(out, 0.0, 1.0)
