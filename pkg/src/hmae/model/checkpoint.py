"""Versioned binary checkpoint container.

Layout (little-endian)::

    b"HMAE" | u32 format | u32 len | config JSON (UTF-8) | u32 n_tensors
    then per tensor: u16 len | name | u8 ndim | u32 * ndim shape | float32 data

Tensors are written in sorted name order and the config JSON is canonical
(sorted keys, compact separators), so load -> save reproduces the bytes.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .network import HMAENetwork

MAGIC = b"HMAE"
FORMAT_VERSION = 1
_OPT_PREFIX = "optim."


class CheckpointFormatError(ValueError):
    pass


class UnsupportedVersionError(CheckpointFormatError):
    pass


@dataclass
class ModelCheckpoint:
    config: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.config["model"])

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.config["train"])

    @property
    def step(self) -> int:
        return int(self.config.get("step", 0))

    def network(self) -> HMAENetwork:
        net = HMAENetwork(self.model_config)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.tensors.items() if not k.startswith(_OPT_PREFIX)}
        net.load_state_dict(state)
        return net

    def restore_optimizer(self, net: HMAENetwork, optimizer: torch.optim.Optimizer) -> None:
        names = dict(net.named_parameters())
        state = optimizer.state
        step = self.tensors.get(_OPT_PREFIX + "step")
        for name, p in names.items():
            m = self.tensors.get(f"{_OPT_PREFIX}exp_avg.{name}")
            v = self.tensors.get(f"{_OPT_PREFIX}exp_avg_sq.{name}")
            if m is None or v is None:
                continue
            state[p] = {
                "step": torch.tensor(float(step[0]) if step is not None else 0.0),
                "exp_avg": torch.from_numpy(m.copy()),
                "exp_avg_sq": torch.from_numpy(v.copy()),
            }

    @classmethod
    def from_training(cls, net: HMAENetwork, optimizer: torch.optim.Optimizer | None, config: dict) -> "ModelCheckpoint":
        tensors = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in net.state_dict().items()}
        if optimizer is not None:
            steps = []
            for name, p in net.named_parameters():
                st = optimizer.state.get(p)
                if not st:
                    continue
                tensors[f"{_OPT_PREFIX}exp_avg.{name}"] = st["exp_avg"].detach().cpu().numpy().astype(np.float32)
                tensors[f"{_OPT_PREFIX}exp_avg_sq.{name}"] = st["exp_avg_sq"].detach().cpu().numpy().astype(np.float32)
                steps.append(float(st["step"]))
            if steps:
                tensors[_OPT_PREFIX + "step"] = np.array([steps[0]], dtype=np.float32)
        return cls(dict(config), tensors)


def _canonical_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def to_bytes(ckpt: ModelCheckpoint) -> bytes:
    blob = _canonical_json(ckpt.config)
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob, struct.pack("<I", len(ckpt.tensors))]
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        if not np.all(np.isfinite(arr)):
            raise CheckpointFormatError(f"tensor {name} has non-finite values")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> ModelCheckpoint:
    if data[:4] != MAGIC:
        raise CheckpointFormatError("not an HMAE checkpoint (bad magic bytes)")
    try:
        version, blob_len = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise UnsupportedVersionError(f"checkpoint format {version} is not supported (expected {FORMAT_VERSION})")
        pos = 12
        config = json.loads(data[pos:pos + blob_len].decode("utf-8"))
        pos += blob_len
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            tensors[name] = arr.astype(np.float32)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(data):
        raise CheckpointFormatError("trailing bytes after the last tensor")
    return ModelCheckpoint(config, tensors)


def save(ckpt: ModelCheckpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)


def load(path) -> ModelCheckpoint:
    return from_bytes(Path(path).read_bytes())
