"""Datasets: the procedural ProcShapes generator, IDX files and corrupted copies."""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .corruptions import CorruptionSpec, apply
from .imagecore import SeededRng

SHAPE_CLASSES = ("disk", "square", "triangle", "cross", "ring", "bar", "L", "T", "X", "diamond")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class IdxError(DataError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[3] not in (1, 3):
            raise DataError(f"images must be (N, H, W, 1|3), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(f"{self.labels.shape[0]} labels for {self.images.shape[0]} images")
        if self.labels.size and self.labels.min() < 0:
            raise DataError("negative label")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def num_classes(self) -> int:
        return int(self.provenance.get("classes", int(self.labels.max()) + 1 if len(self) else 0))

    def digest(self) -> str:
        """SHA-256 over header, little-endian f32 pixels and little-endian i64 labels."""
        h = hashlib.sha256()
        h.update(b"overlapscore-dataset-v1\n")
        h.update(json.dumps({"shape": list(self.images.shape)}).encode())
        h.update(self.images.astype("<f4").tobytes())
        h.update(self.labels.astype("<i8").tobytes())
        return h.hexdigest()

    def subset(self, idx) -> "Dataset":
        return replace(self, images=self.images[idx], labels=self.labels[idx])

    def save(self, path) -> None:
        np.savez(
            path,
            images=self.images,
            labels=self.labels,
            meta=np.array(json.dumps({"split": self.split, "provenance": self.provenance})),
        )

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(z["images"], z["labels"], meta["split"], meta["provenance"])


def _shape_mask(name: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Indicator of the unit shape in local coordinates (v grows downward)."""
    au, av = np.abs(u), np.abs(v)
    if name == "disk":
        return u**2 + v**2 <= 1.0
    if name == "square":
        return (au <= 0.8) & (av <= 0.8)
    if name == "triangle":
        # apex (0, -0.9), base corners (+-0.9, 0.8)
        return (v <= 0.8) & (v >= -0.9 + (1.7 / 0.9) * au)
    if name == "cross":
        return ((au <= 0.25) & (av <= 0.95)) | ((av <= 0.25) & (au <= 0.95))
    if name == "ring":
        r2 = u**2 + v**2
        return (r2 <= 1.0) & (r2 >= 0.55**2)
    if name == "bar":
        return (au <= 0.95) & (av <= 0.3)
    if name == "L":
        return ((u >= -0.8) & (u <= -0.35) & (av <= 0.9)) | ((v >= 0.45) & (v <= 0.9) & (u >= -0.8) & (u <= 0.8))
    if name == "T":
        return ((v >= -0.9) & (v <= -0.45) & (au <= 0.9)) | ((au <= 0.22) & (v >= -0.9) & (v <= 0.9))
    if name == "X":
        s = math.sqrt(0.5)
        a, b = s * (u - v), s * (u + v)
        return ((np.abs(a) <= 0.2) & (np.abs(b) <= 1.0)) | ((np.abs(b) <= 0.2) & (np.abs(a) <= 1.0))
    if name == "diamond":
        return au + av <= 1.0
    raise DataError(f"unknown shape {name!r}")


def render_shape(name: str, side: int, rng: SeededRng, supersample: int = 2) -> np.ndarray:
    """One RGB ProcShapes image: a colored shape on a noisy flat background."""
    light_bg = rng.random() < 0.5
    lo_hi = ((0.65, 0.95), (0.05, 0.35))
    bg = rng.uniform(*lo_hi[0 if light_bg else 1], size=3)
    fg = rng.uniform(*lo_hi[1 if light_bg else 0], size=3)
    angle = math.radians(rng.uniform(-15.0, 15.0))
    half = rng.uniform(0.30, 0.40) * side
    cy = rng.uniform(0.42, 0.58) * side
    cx = rng.uniform(0.42, 0.58) * side

    n = side * supersample
    grid = (np.arange(n) + 0.5) / supersample
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    dy, dx = (yy - cy) / half, (xx - cx) / half
    ca, sa = math.cos(angle), math.sin(angle)
    u = ca * dx + sa * dy
    v = -sa * dx + ca * dy
    mask = _shape_mask(name, u, v).astype(np.float64)
    cover = mask.reshape(side, supersample, side, supersample).mean(axis=(1, 3))[:, :, None]
    img = (1.0 - cover) * bg + cover * fg
    img = img + rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_procshapes(
    classes: int = 10, per_class: int = 200, side: int = 32, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Render ``per_class`` images per class; the first 80% of each class train."""
    if not 2 <= classes <= len(SHAPE_CLASSES):
        raise DataError(f"classes={classes} must be in [2, {len(SHAPE_CLASSES)}]")
    if side < 24:
        raise DataError(f"side={side} must be >= 24")
    if per_class < 1:
        raise DataError("per_class must be >= 1")
    n_train = int(math.floor(0.8 * per_class))
    root = SeededRng(seed).derive("procshapes")
    out = {}
    for split, indices in (("train", range(n_train)), ("test", range(n_train, per_class))):
        imgs, labels = [], []
        for i in indices:
            for k in range(classes):
                imgs.append(render_shape(SHAPE_CLASSES[k], side, root.derive(k, i)))
                labels.append(k)
        images = np.stack(imgs) if imgs else np.zeros((0, side, side, 3))
        prov = {"generator": "procshapes", "classes": classes, "per_class": per_class, "side": side, "seed": seed}
        out[split] = Dataset(images, np.array(labels, dtype=np.int64), split, prov)
    return out["train"], out["test"]


def _read_u32(data: bytes, offset: int) -> int:
    if len(data) < offset + 4:
        raise IdxError("truncated header", len(data))
    return struct.unpack_from(">I", data, offset)[0]


def _parse_idx(data: bytes, expect_magic: set[int], what: str) -> np.ndarray:
    magic = _read_u32(data, 0)
    if magic not in expect_magic:
        raise IdxError(f"bad {what} magic {magic:#010x}", 0)
    ndim = magic & 0xFF
    dims = [_read_u32(data, 4 + 4 * i) for i in range(ndim)]
    start = 4 + 4 * ndim
    need = int(np.prod(dims))
    if len(data) - start < need:
        raise IdxError(f"truncated {what} payload: need {need} bytes, have {len(data) - start}", len(data))
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=start).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair (unsigned-byte payloads, big-endian header).

    Image files may be 3-D (``N x rows x cols``, magic 0x00000803) or 4-D with a
    trailing channel axis (magic 0x00000804).
    """
    img_bytes = Path(images_path).read_bytes()
    lab_bytes = Path(labels_path).read_bytes()
    raw = _parse_idx(img_bytes, {IDX_IMAGES_MAGIC, 0x00000804}, "images")
    labels = _parse_idx(lab_bytes, {IDX_LABELS_MAGIC}, "labels")
    if raw.shape[0] != labels.shape[0]:
        raise IdxError(f"count mismatch: {raw.shape[0]} images vs {labels.shape[0]} labels", 4)
    if raw.ndim == 3:
        raw = raw[..., None]
    if raw.shape[3] not in (1, 3):
        raise IdxError(f"unsupported channel count {raw.shape[3]}", 16)
    digest = hashlib.sha256(img_bytes + lab_bytes).hexdigest()
    prov = {"source": "idx", "digest": digest, "classes": int(labels.max()) + 1 if labels.size else 0}
    return Dataset(raw.astype(np.float32) / 255.0, labels.astype(np.int64), split, prov)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write pixels quantized to bytes; single-channel datasets use the 3-D layout."""
    imgs = np.rint(np.clip(dataset.images, 0, 1) * 255).astype(np.uint8)
    if imgs.shape[3] == 1:
        imgs = imgs[..., 0]
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", 0x00000800 | imgs.ndim))
        fh.write(struct.pack(f">{imgs.ndim}I", *imgs.shape))
        fh.write(imgs.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(dataset)))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def image_rng(seed: int, index: int) -> SeededRng:
    return SeededRng(seed).derive("image", index)


def corrupt_image(spec: CorruptionSpec, image, seed: int, index: int, resample_severity: bool = False):
    """Corrupt image ``index`` with its own stream; optionally draw severity 1..5 first."""
    rng = image_rng(seed, index)
    if resample_severity:
        spec = spec.with_severity(rng.integers(1, 5))
    return apply(spec, image, rng)


def corrupt_dataset(
    dataset: Dataset, spec: CorruptionSpec, seed: int, resample_severity: bool = False
) -> Dataset:
    out = np.empty_like(dataset.images)
    for i in range(len(dataset)):
        out[i] = corrupt_image(spec, dataset.images[i], seed, i, resample_severity)
    prov = dict(dataset.provenance)
    prov["corruption"] = {
        "spec": spec.to_dict(),
        "seed": seed,
        "resample_severity": resample_severity,
        "source_digest": dataset.digest(),
    }
    return Dataset(out, dataset.labels.copy(), dataset.split, prov)
