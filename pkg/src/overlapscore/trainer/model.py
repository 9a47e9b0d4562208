"""Small classifiers in plain numpy: forward pass, loss and exact gradients.

Inputs are NHWC batches. Weight arrays are named with an upper-case letter
(``W*`` dense, ``K*`` conv) and receive weight decay; biases (``b*``) do not.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..imagecore import SeededRng


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ModelArch:
    kind: str  # "mlp" or "cnn"
    input_shape: tuple[int, int, int]
    num_classes: int
    hidden: tuple[int, ...] = field(default=(256,))
    channels: tuple[int, ...] = field(default=(16, 32))

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(s) for s in self.hidden))
        object.__setattr__(self, "channels", tuple(int(s) for s in self.channels))
        if self.kind not in ("mlp", "cnn"):
            raise ValueError(f"unknown arch kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        h, w, _ = self.input_shape
        if self.kind == "cnn":
            div = 2 ** len(self.channels)
            if h % div or w % div:
                raise ValueError(f"cnn input sides must be divisible by {div}, got {h}x{w}")

    def to_dict(self) -> dict[str, Any]:
        d = {"kind": self.kind, "input_shape": list(self.input_shape), "num_classes": self.num_classes}
        if self.kind == "mlp":
            d["hidden"] = list(self.hidden)
        else:
            d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelArch":
        return cls(
            d["kind"],
            tuple(d["input_shape"]),
            int(d["num_classes"]),
            tuple(d.get("hidden", (256,))),
            tuple(d.get("channels", (16, 32))),
        )

    @classmethod
    def default(cls, kind: str, input_shape, num_classes: int) -> "ModelArch":
        return cls(kind, tuple(input_shape), num_classes)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        h, w, c = self.input_shape
        shapes: dict[str, tuple[int, ...]] = {}
        if self.kind == "mlp":
            fan = h * w * c
            for i, units in enumerate(self.hidden, start=1):
                shapes[f"W{i}"] = (fan, units)
                shapes[f"b{i}"] = (units,)
                fan = units
            n = len(self.hidden) + 1
        else:
            cin = c
            for i, cout in enumerate(self.channels, start=1):
                shapes[f"K{i}"] = (3, 3, cin, cout)
                shapes[f"b{i}"] = (cout,)
                cin = cout
                h, w = h // 2, w // 2
            fan = h * w * cin
            n = len(self.channels) + 1
        shapes[f"W{n}"] = (fan, self.num_classes)
        shapes[f"b{n}"] = (self.num_classes,)
        return shapes


def init_params(arch: ModelArch, rng: SeededRng, dtype=np.float32) -> dict[str, np.ndarray]:
    """Kaiming-uniform (fan-in, ReLU gain) weights and zero biases."""
    params = {}
    for name, shape in arch.param_shapes().items():
        if name.startswith("b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def is_decayed(name: str) -> bool:
    return not name.startswith("b")


# -- layers -----------------------------------------------------------------

def _conv3x3(x, k, b):
    n, h, w, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, i : i + h, j : j + w, :] for i in range(3) for j in range(3)], axis=-1)
    cols = cols.reshape(n * h * w, -1)
    out = cols @ k.reshape(-1, k.shape[-1]) + b
    return out.reshape(n, h, w, -1), cols


def _conv3x3_backward(dout, cols, k, x_shape):
    n, h, w, c = x_shape
    f = k.shape[-1]
    dflat = dout.reshape(-1, f)
    dk = (cols.T @ dflat).reshape(k.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ k.reshape(-1, f).T).reshape(n, h, w, 9, c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dout.dtype)
    for idx in range(9):
        i, j = divmod(idx, 3)
        dxp[:, i : i + h, j : j + w, :] += dcols[:, :, :, idx, :]
    return dxp[:, 1:-1, 1:-1, :], dk, db


def _maxpool2(x):
    n, h, w, c = x.shape
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    arg = win.argmax(axis=-1)
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg


def _maxpool2_backward(dout, arg, x_shape):
    n, h, w, c = x_shape
    dwin = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


# -- network ----------------------------------------------------------------

def forward(arch: ModelArch, params: dict[str, np.ndarray], x: np.ndarray):
    """Return ``(logits, cache)`` for an NHWC batch."""
    if x.ndim != 4 or tuple(x.shape[1:]) != arch.input_shape:
        raise ShapeMismatchError(f"batch shape {x.shape[1:]} does not match arch input {arch.input_shape}")
    dtype = params[next(iter(params))].dtype
    a = x.astype(dtype, copy=False)
    cache: list[tuple] = []
    if arch.kind == "mlp":
        a = a.reshape(a.shape[0], -1)
        for i in range(1, len(arch.hidden) + 1):
            z = a @ params[f"W{i}"] + params[f"b{i}"]
            cache.append(("dense_relu", i, a, z))
            a = np.maximum(z, 0)
        n = len(arch.hidden) + 1
    else:
        for i in range(1, len(arch.channels) + 1):
            z, cols = _conv3x3(a, params[f"K{i}"], params[f"b{i}"])
            r = np.maximum(z, 0)
            p, arg = _maxpool2(r)
            cache.append(("conv_relu_pool", i, a.shape, cols, z, arg))
            a = p
        cache.append(("flatten", a.shape))
        a = a.reshape(a.shape[0], -1)
        n = len(arch.channels) + 1
    logits = a @ params[f"W{n}"] + params[f"b{n}"]
    cache.append(("dense", n, a))
    return logits, cache


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def loss_ce(logits, labels, weight_decay: float, params: dict[str, np.ndarray]) -> float:
    ce, _ = cross_entropy(logits, labels)
    reg = sum(float(np.sum(p.astype(np.float64) ** 2)) for k, p in params.items() if is_decayed(k))
    return ce + 0.5 * weight_decay * reg


def backward(arch: ModelArch, params, cache, dlogits: np.ndarray, weight_decay: float = 0.0):
    """Gradients of ``mean CE + wd/2 * sum ||W||^2`` given ``dlogits`` of the mean CE."""
    grads: dict[str, np.ndarray] = {}
    d = dlogits
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "dense":
            _, i, a = entry
            grads[f"W{i}"] = a.T @ d
            grads[f"b{i}"] = d.sum(axis=0)
            d = d @ params[f"W{i}"].T
        elif kind == "dense_relu":
            _, i, a, z = entry
            d = d * (z > 0)
            grads[f"W{i}"] = a.T @ d
            grads[f"b{i}"] = d.sum(axis=0)
            d = d @ params[f"W{i}"].T
        elif kind == "flatten":
            d = d.reshape(entry[1])
        elif kind == "conv_relu_pool":
            _, i, x_shape, cols, z, arg = entry
            d = _maxpool2_backward(d, arg, z.shape) * (z > 0)
            d, grads[f"K{i}"], grads[f"b{i}"] = _conv3x3_backward(d, cols, params[f"K{i}"], x_shape)
    if weight_decay:
        for k, p in params.items():
            if is_decayed(k):
                grads[k] = grads[k] + weight_decay * p
    return {k: grads[k] for k in params}


def loss_and_grads(arch: ModelArch, params, x, labels, weight_decay: float = 0.0):
    logits, cache = forward(arch, params, x)
    ce, dlogits = cross_entropy(logits, labels)
    reg = sum(float(np.sum(p.astype(np.float64) ** 2)) for k, p in params.items() if is_decayed(k))
    grads = backward(arch, params, cache, dlogits, weight_decay)
    return ce + 0.5 * weight_decay * reg, grads


def predict(arch: ModelArch, params, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    """Top-1 class per sample; ties go to the lowest class index."""
    out = []
    for s in range(0, x.shape[0], batch_size):
        logits, _ = forward(arch, params, x[s : s + batch_size])
        out.append(np.argmax(logits, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)
