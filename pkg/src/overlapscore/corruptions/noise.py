"""Additive and replacement noise models."""
from __future__ import annotations

import numpy as np

from ..imagecore import SeededRng, as_image, clamp01
from .errors import CorruptionParamError

# Poisson draws use CDF inversion below this mean and a rounded normal
# approximation (mean lam, variance lam) at or above it.
POISSON_INVERSION_MAX_MEAN = 64.0


def gaussian_noise(image, sigma: float, rng: SeededRng) -> np.ndarray:
    img = as_image(image)
    if sigma < 0:
        raise CorruptionParamError(f"gaussian_noise: sigma={sigma} must be >= 0")
    if sigma == 0:
        return clamp01(img)
    return clamp01(img + rng.normal(0.0, sigma, size=img.shape))


def poisson_inversion(lam: np.ndarray, rng: SeededRng) -> np.ndarray:
    """Poisson samples, one per entry of ``lam``.

    Small means: sequential search on the CDF with one uniform per sample.
    Large means: ``max(0, round(lam + sqrt(lam) * z))``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    flat = lam.ravel()
    u = rng.random(flat.size)
    z = rng.normal(0.0, 1.0, size=flat.size)
    out = np.zeros(flat.size, dtype=np.float64)

    small = flat < POISSON_INVERSION_MAX_MEAN
    if small.any():
        ls = flat[small]
        us = u[small]
        p = np.exp(-ls)
        cdf = p.copy()
        k = np.zeros_like(ls)
        active = us > cdf
        step = 0
        while active.any():
            step += 1
            p = np.where(active, p * ls / step, p)
            cdf = np.where(active, cdf + p, cdf)
            k = np.where(active, k + 1, k)
            # guards against cdf rounding short of u in the far tail
            active = active & (us > cdf) & (step < 1000)
        out[small] = k
    big = ~small
    if big.any():
        lb = flat[big]
        out[big] = np.maximum(0.0, np.rint(lb + np.sqrt(lb) * z[big]))
    return out.reshape(lam.shape)


def shot_noise(image, scale: float, rng: SeededRng) -> np.ndarray:
    img = as_image(image)
    if not scale > 0:
        raise CorruptionParamError(f"shot_noise: scale={scale} must be > 0")
    counts = poisson_inversion(np.clip(img, 0.0, 1.0) * scale, rng)
    return clamp01(counts / scale)


def impulse_noise(image, p: float, rng: SeededRng) -> np.ndarray:
    """Salt-and-pepper: each value becomes 0 w.p. p/2 and 1 w.p. p/2."""
    img = as_image(image)
    if not 0.0 <= p <= 1.0:
        raise CorruptionParamError(f"impulse_noise: p={p} must be in [0, 1]")
    if p == 0:
        return clamp01(img)
    u = rng.random(img.shape)
    out = np.array(img, dtype=np.float64)
    out[u < p / 2] = 0.0
    out[(u >= p / 2) & (u < p)] = 1.0
    return clamp01(out)
