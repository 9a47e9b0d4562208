"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"OVSCKPT\\0"
    u32       format version (1)
    u32       header length L
    L bytes   UTF-8 JSON header: arch, parameter names/shapes (in payload
              order), provenance (train spec, converged flag, accuracy,
              loss history)
    ...       parameter arrays, float32 little-endian, C order, concatenated
    32 bytes  SHA-256 of every preceding byte
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model import ModelArch
from .train import TrainedModel

MAGIC = b"OVSCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: TrainedModel) -> bytes:
    names = list(model.params)
    header = {
        "arch": model.arch.to_dict(),
        "params": [[n, list(model.params[n].shape)] for n in names],
        "provenance": {
            "train_spec": model.train_spec,
            "converged": bool(model.converged),
            "final_train_accuracy": float(model.final_train_accuracy),
            "loss_history": [float(x) for x in model.loss_history],
        },
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb]
    parts += [np.ascontiguousarray(model.params[n], dtype="<f4").tobytes() for n in names]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads(data: bytes) -> TrainedModel:
    if len(data) < len(MAGIC) + 8 + 32 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic or too short)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint digest mismatch")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = len(MAGIC) + 8
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    params = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(shape)
        params[name] = arr.astype(np.float32)
        pos += 4 * count
    if pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint payload")
    prov = header["provenance"]
    return TrainedModel(
        ModelArch.from_dict(header["arch"]),
        params,
        prov["train_spec"],
        prov["converged"],
        prov["final_train_accuracy"],
        prov["loss_history"],
    )


def save(model: TrainedModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def load(path) -> TrainedModel:
    return loads(Path(path).read_bytes())
