"""Parameterized image corruptions with 5-level severity tables."""
from .blur import Kernel, defocus_blur, disk_kernel, glass_blur, line_kernel, motion_blur, zoom_blur
from .digital import elastic, jpeg_proxy, pixelate
from .errors import CorruptionError, CorruptionParamError, UnknownCorruptionError
from .noise import gaussian_noise, impulse_noise, shot_noise
from .occlusion import border, obstruction
from .photometric import brightness, contrast, fog
from .spec import (
    CORRUPTION_IDS,
    IDENTITY_PARAMS,
    CorruptionSpec,
    apply,
    resolve_params,
    severity_table,
)

__all__ = [
    "CORRUPTION_IDS",
    "IDENTITY_PARAMS",
    "CorruptionError",
    "CorruptionParamError",
    "CorruptionSpec",
    "Kernel",
    "UnknownCorruptionError",
    "apply",
    "border",
    "brightness",
    "contrast",
    "defocus_blur",
    "disk_kernel",
    "elastic",
    "fog",
    "gaussian_noise",
    "glass_blur",
    "impulse_noise",
    "jpeg_proxy",
    "line_kernel",
    "motion_blur",
    "obstruction",
    "pixelate",
    "resolve_params",
    "severity_table",
    "shot_noise",
    "zoom_blur",
]
