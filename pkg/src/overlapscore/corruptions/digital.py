"""Resampling, compression and warping corruptions."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..imagecore import SeededRng, as_image, clamp01
from .errors import CorruptionParamError

# Annex K luminance quantization table (quality 50)
LUMINANCE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0, :] = np.sqrt(1.0 / n)
    return m


DCT8 = _dct_matrix(8)


def quant_table(quality: int) -> np.ndarray:
    """IJG quality scaling of the luminance table, entries clipped to [1, 255]."""
    if not 1 <= quality <= 100:
        raise CorruptionParamError(f"jpeg quality={quality} must be in [1, 100]")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((LUMINANCE_TABLE * scale + 50.0) / 100.0), 1, 255)


def pixelate(image, factor: int) -> np.ndarray:
    """Mean over ``factor x factor`` blocks, repeated back to full size.

    Blocks on the bottom/right edge may be partial; they average the pixels
    they contain.
    """
    img = as_image(image).astype(np.float64)
    if int(factor) != factor or factor < 1:
        raise CorruptionParamError(f"pixelate: factor={factor} must be an integer >= 1")
    f = int(factor)
    if f == 1:
        return clamp01(img)
    h, w, c = img.shape
    hb, wb = -(-h // f), -(-w // f)
    pad = np.pad(img, ((0, hb * f - h), (0, wb * f - w), (0, 0)))
    ones = np.pad(np.ones((h, w, 1)), ((0, hb * f - h), (0, wb * f - w), (0, 0)))
    sums = pad.reshape(hb, f, wb, f, c).sum(axis=(1, 3))
    cnt = ones.reshape(hb, f, wb, f, 1).sum(axis=(1, 3))
    small = sums / cnt
    big = np.repeat(np.repeat(small, f, axis=0), f, axis=1)
    return clamp01(big[:h, :w])


def jpeg_proxy(image, quality: int) -> np.ndarray:
    """Blockwise 8x8 DCT quantize/dequantize per channel, no entropy coding."""
    img = as_image(image).astype(np.float64)
    q = quant_table(quality)
    h, w, c = img.shape
    hp, wp = -(-h // 8) * 8, -(-w // 8) * 8
    x = np.pad(img * 255.0 - 128.0, ((0, hp - h), (0, wp - w), (0, 0)), mode="edge")
    # (H/8, 8, W/8, 8, C) -> (H/8, W/8, C, 8, 8)
    blocks = x.reshape(hp // 8, 8, wp // 8, 8, c).transpose(0, 2, 4, 1, 3)
    coef = DCT8 @ blocks @ DCT8.T
    coef = np.rint(coef / q) * q
    rec = DCT8.T @ coef @ DCT8
    out = rec.transpose(0, 3, 1, 4, 2).reshape(hp, wp, c)[:h, :w]
    return clamp01((out + 128.0) / 255.0)


def elastic(image, amplitude: float, smoothness: float, rng: SeededRng) -> np.ndarray:
    """Bilinear warp by a Gaussian-smoothed random displacement field.

    Each displacement component is uniform noise smoothed with a Gaussian of
    std ``smoothness`` pixels and rescaled so its largest magnitude equals
    ``amplitude`` pixels.
    """
    img = as_image(image).astype(np.float64)
    if amplitude < 0 or smoothness < 0:
        raise CorruptionParamError(
            f"elastic: need amplitude >= 0 and smoothness >= 0, got {amplitude}, {smoothness}"
        )
    if amplitude == 0:
        return clamp01(img)
    h, w, c = img.shape
    fields = []
    for _ in range(2):
        f = ndimage.gaussian_filter(rng.uniform(-1, 1, size=(h, w)), smoothness, mode="reflect")
        peak = np.abs(f).max()
        fields.append(f * (amplitude / peak) if peak > 0 else f)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = [yy + fields[0], xx + fields[1]]
    out = np.empty_like(img)
    for ch in range(c):
        out[:, :, ch] = ndimage.map_coordinates(img[:, :, ch], coords, order=1, mode="nearest")
    return clamp01(out)
