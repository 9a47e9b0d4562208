"""Overlap-matrix heatmaps written straight to PPM.

Color ramp: 256 steps interpolated linearly between ``RAMP_MIN`` (score 0,
white) and ``RAMP_MAX`` (score 1, dark red). A score s maps to step
round(clip(s, 0, 1) * 255). Invalid cells are drawn in ``INVALID_COLOR``.
"""
from __future__ import annotations

import numpy as np

from .imagecore import write_ppm
from .scores import OverlapMatrix

RAMP_MIN = (255, 255, 255)
RAMP_MAX = (165, 0, 38)
INVALID_COLOR = (128, 128, 128)
RAMP_STEPS = 256


def ramp() -> np.ndarray:
    """The (256, 3) uint8 ramp table."""
    t = np.arange(RAMP_STEPS, dtype=np.float64)[:, None] / (RAMP_STEPS - 1)
    lo, hi = np.array(RAMP_MIN, np.float64), np.array(RAMP_MAX, np.float64)
    return np.rint(lo + (hi - lo) * t).astype(np.uint8)


def score_color(score: float | None) -> tuple[int, int, int]:
    if score is None or not np.isfinite(score):
        return INVALID_COLOR
    step = int(np.floor(np.clip(score, 0.0, 1.0) * (RAMP_STEPS - 1) + 0.5))
    return tuple(int(v) for v in ramp()[step])


def heatmap_pixels(matrix: OverlapMatrix, cell: int = 16) -> np.ndarray:
    """(n*cell, n*cell, 3) uint8 image; row i, column j is cell (i, j)."""
    n = len(matrix.ids)
    img = np.empty((n * cell, n * cell, 3), dtype=np.uint8)
    for i in range(n):
        for j in range(n):
            s = float(matrix.scores[i, j]) if matrix.validity[i, j] == "ok" else None
            img[i * cell:(i + 1) * cell, j * cell:(j + 1) * cell] = score_color(s)
    return img


def render_heatmap(matrix: OverlapMatrix, path, cell: int = 16) -> None:
    write_ppm(heatmap_pixels(matrix, cell).astype(np.float64) / 255.0, path)
