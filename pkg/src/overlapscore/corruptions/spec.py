"""Corruption descriptions, severity tables and the ``apply`` dispatcher."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Callable, Mapping

import numpy as np

from ..imagecore import SeededRng, as_image
from . import blur, digital, noise, occlusion, photometric
from .errors import CorruptionParamError, UnknownCorruptionError

INT_PARAMS = {"length", "steps", "d", "iterations", "factor", "quality", "t_min", "t_max", "e_min", "e_max"}

# Each entry: (function, parameter names, takes rng)
_DISPATCH: dict[str, tuple[Callable, tuple[str, ...], bool]] = {
    "gaussian_noise": (noise.gaussian_noise, ("sigma",), True),
    "shot_noise": (noise.shot_noise, ("scale",), True),
    "impulse_noise": (noise.impulse_noise, ("p",), True),
    "defocus_blur": (blur.defocus_blur, ("radius",), False),
    "motion_blur": (blur.motion_blur, ("length", "angle"), False),
    "zoom_blur": (blur.zoom_blur, ("z_max", "steps"), False),
    "glass_blur": (blur.glass_blur, ("d", "iterations"), True),
    "brightness": (photometric.brightness, ("beta",), False),
    "contrast": (photometric.contrast, ("alpha",), False),
    "fog": (photometric.fog, ("t", "decay"), True),
    "pixelate": (digital.pixelate, ("factor",), False),
    "jpeg_proxy": (digital.jpeg_proxy, ("quality",), False),
    "elastic": (digital.elastic, ("amplitude", "smoothness"), True),
    "border": (occlusion.border, ("t_min", "t_max"), True),
    "obstruction": (occlusion.obstruction, ("e_min", "e_max"), True),
}

CORRUPTION_IDS: tuple[str, ...] = tuple(_DISPATCH)

# Overrides that make each family an exact identity. shot_noise, jpeg_proxy
# and obstruction have no such setting.
IDENTITY_PARAMS: dict[str, dict[str, Any]] = {
    "gaussian_noise": {"sigma": 0.0},
    "impulse_noise": {"p": 0.0},
    "defocus_blur": {"radius": 0.0},
    "motion_blur": {"length": 1, "angle": 0.0},
    "zoom_blur": {"z_max": 1.0, "steps": 1},
    "glass_blur": {"d": 0, "iterations": 1},
    "brightness": {"beta": 0.0},
    "contrast": {"alpha": 1.0},
    "fog": {"t": 0.0},
    "pixelate": {"factor": 1},
    "elastic": {"amplitude": 0.0, "smoothness": 1.0},
    "border": {"t_min": 0, "t_max": 0},
}


@lru_cache(maxsize=1)
def severity_table() -> dict[str, Any]:
    text = resources.files(__package__).joinpath("severity.json").read_text()
    table = json.loads(text)
    table.pop("_doc", None)
    return table


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class CorruptionSpec:
    id: str
    severity: int = 3
    params: tuple[tuple[str, Any], ...] = field(default=())

    def __post_init__(self):
        if self.id not in _DISPATCH:
            raise UnknownCorruptionError(
                f"unknown corruption id {self.id!r}; valid ids: {', '.join(CORRUPTION_IDS)}"
            )
        if int(self.severity) != self.severity or not 1 <= self.severity <= 5:
            raise CorruptionParamError(f"severity {self.severity!r} not in 1..5")
        params = self.params
        if isinstance(params, Mapping):
            params = tuple(params.items())
        params = tuple(sorted((str(k), v) for k, v in params))
        allowed = _DISPATCH[self.id][1]
        for k, _ in params:
            if k not in allowed:
                raise CorruptionParamError(f"{self.id} has no parameter {k!r}; expected one of {allowed}")
        object.__setattr__(self, "severity", int(self.severity))
        object.__setattr__(self, "params", params)

    @classmethod
    def identity(cls, corruption_id: str) -> "CorruptionSpec":
        if corruption_id not in IDENTITY_PARAMS:
            raise CorruptionParamError(f"{corruption_id} has no identity-strength setting")
        return cls(corruption_id, 3, IDENTITY_PARAMS[corruption_id])

    @property
    def key(self) -> str:
        """Canonical string used in file names, seeds and cache keys."""
        if not self.params:
            return f"{self.id}@{self.severity}"
        body = ",".join(f"{k}={json.dumps(v)}" for k, v in self.params)
        return f"{self.id}@{self.severity}{{{body}}}"

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "severity": self.severity, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | str) -> "CorruptionSpec":
        if isinstance(d, str):
            return cls(d)
        return cls(d["id"], d.get("severity", 3), tuple((d.get("params") or {}).items()))

    def with_severity(self, severity: int) -> "CorruptionSpec":
        return CorruptionSpec(self.id, severity, self.params)


def resolve_params(spec: CorruptionSpec, shape: tuple[int, ...]) -> dict[str, Any]:
    """Severity row rescaled to the image size, then explicit overrides."""
    entry = severity_table()[spec.id]
    row = dict(entry["rows"][spec.severity - 1])
    scale = min(shape[0], shape[1]) / entry["reference_side"]
    for name in entry["spatial"]:
        v = row[name] * scale
        row[name] = _round_half_up(v) if name in INT_PARAMS else v
    for name in ("factor", "length"):
        if name in row:
            row[name] = max(1, row[name])
    row.update(dict(spec.params))
    return row


def apply(spec: CorruptionSpec, image, rng: SeededRng) -> np.ndarray:
    """Corrupt one image. Deterministic in ``(spec, image, rng state)``."""
    img = as_image(image)
    fn, names, takes_rng = _DISPATCH[spec.id]
    params = resolve_params(spec, img.shape)
    kwargs = {k: params[k] for k in names if k in params}
    if spec.id == "motion_blur" and kwargs.get("angle") is None:
        kwargs["angle"] = rng.uniform(-45.0, 45.0)
    if takes_rng:
        return fn(img, rng=rng, **kwargs)
    return fn(img, **kwargs)
