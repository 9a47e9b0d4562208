"""SGD with momentum, step learning-rate schedule and corruption augmentation."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..corruptions import CorruptionSpec, apply
from ..data import DataError, Dataset
from ..imagecore import SeededRng
from .model import ModelArch, ShapeMismatchError, init_params, loss_and_grads, predict

AUGMENT_MODES = ("half", "full")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}, step {step} (loss={loss})")
        self.loss = loss
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_drop_epochs: tuple[int, ...] = (8, 12)
    augment: CorruptionSpec | None = None
    augment_mode: str = "half"
    resample_severity: bool = False
    hflip: bool = False
    seed: int = 0
    convergence_threshold: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_epochs", tuple(int(e) for e in self.lr_drop_epochs))
        if not self.lr0 > 0:
            raise ValueError(f"lr0={self.lr0} must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        drops = self.lr_drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ValueError(f"lr_drop_epochs {drops} must be strictly increasing")
        if drops and self.epochs and drops[-1] >= self.epochs:
            raise ValueError(f"lr_drop_epochs {drops} must be < epochs={self.epochs}")
        if self.augment_mode not in AUGMENT_MODES:
            raise ValueError(f"augment_mode must be one of {AUGMENT_MODES}")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for d in self.lr_drop_epochs if d <= epoch)
        return self.lr0 * 10.0 ** (-drops)

    def to_dict(self) -> dict[str, Any]:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr0": self.lr0,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "lr_drop_epochs": list(self.lr_drop_epochs),
            "augment": None if self.augment is None else self.augment.to_dict(),
            "augment_mode": self.augment_mode,
            "resample_severity": self.resample_severity,
            "hflip": self.hflip,
            "seed": self.seed,
            "convergence_threshold": self.convergence_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        if d.get("augment") is not None:
            d["augment"] = CorruptionSpec.from_dict(d["augment"])
        if "lr_drop_epochs" in d:
            d["lr_drop_epochs"] = tuple(d["lr_drop_epochs"])
        return cls(**d)


@dataclass
class TrainedModel:
    arch: ModelArch
    params: dict[str, np.ndarray]
    train_spec: dict[str, Any] = field(default_factory=dict)
    converged: bool = False
    final_train_accuracy: float = float("nan")
    loss_history: list[float] = field(default_factory=list)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.arch.to_dict(), sort_keys=True).encode())
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f4").tobytes())
        return h.hexdigest()

    def predict(self, images: np.ndarray) -> np.ndarray:
        return predict(self.arch, self.params, images)


def augment_batch(
    images: np.ndarray, indices: np.ndarray, config: TrainConfig, epoch: int
) -> np.ndarray:
    """Corrupt the first ``ceil(B/2)`` (or all) images of a shuffled batch.

    Each corrupted image uses a fresh stream keyed by ``(seed, epoch, sample index)``.
    """
    out = images.copy()
    if config.augment is not None:
        b = len(indices)
        n_aug = b if config.augment_mode == "full" else math.ceil(b / 2)
        root = SeededRng(config.seed).derive("augment")
        for pos in range(n_aug):
            rng = root.derive(epoch, int(indices[pos]))
            spec = config.augment
            if config.resample_severity:
                spec = spec.with_severity(rng.integers(1, 5))
            out[pos] = apply(spec, images[pos], rng)
    if config.hflip:
        root = SeededRng(config.seed).derive("hflip", epoch)
        for pos, i in enumerate(indices):
            if root.derive(int(i)).random() < 0.5:
                out[pos] = out[pos, :, ::-1]
    return out


def train(arch: ModelArch, dataset: Dataset, config: TrainConfig, dtype=np.float32) -> TrainedModel:
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if tuple(dataset.image_shape) != arch.input_shape:
        raise ShapeMismatchError(f"dataset shape {dataset.image_shape} != arch input {arch.input_shape}")
    root = SeededRng(config.seed)
    params = init_params(arch, root.derive("init"), dtype=dtype)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = len(dataset)
    history: list[float] = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = root.derive("shuffle", epoch).permutation(n)
        total, batches = 0.0, 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            x = augment_batch(dataset.images[idx], idx, config, epoch)
            loss, grads = loss_and_grads(arch, params, x, dataset.labels[idx], config.weight_decay)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, step, loss)
            for k in params:
                velocity[k] *= config.momentum
                velocity[k] += grads[k]
                params[k] -= lr * velocity[k]
            total += loss
            batches += 1
        history.append(total / batches)
    model = TrainedModel(arch, params, {"config": config.to_dict()}, loss_history=history)
    if config.epochs > 0:
        acc = evaluate(model, dataset)
        model.final_train_accuracy = acc
        model.converged = acc >= config.convergence_threshold
    return model


def evaluate(model: TrainedModel, test: Dataset) -> float:
    """Top-1 accuracy in [0, 1]."""
    if len(test) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if tuple(test.image_shape) != model.arch.input_shape:
        raise ShapeMismatchError(f"dataset shape {test.image_shape} != arch input {model.arch.input_shape}")
    pred = model.predict(test.images)
    return float(np.mean(pred == test.labels))
