"""Binary checkpoint persistence for trained models.

Layout, little-endian: magic "TSCK", u32 version=1, u32 config-text
length + UTF-8 config text (the run-config format, carrying the model
configuration and, for sorting-task checkpoints, the permutation table's
size and seed), u32 tensor count, then per tensor: u16 name length +
name bytes, u8 rank, rank u64 dims, float64 payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stepseq.configio import model_config_from_text, model_config_to_text
from stepseq.models import ModelConfig, StepModel, build_model

_MAGIC = b"TSCK"
_VERSION = 1


class CheckpointFormatError(Exception):
    """Base for unreadable checkpoint files."""


class CheckpointMagicError(CheckpointFormatError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


class CheckpointShapeError(CheckpointFormatError):
    """Declared dims disagree with the payload, or with the target model."""


class UnknownParameterError(CheckpointFormatError):
    """A tensor name has no counterpart in the target model."""


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: ModelConfig
    perm_p: int | None = None
    perm_seed: int | None = None

    @property
    def is_sorting_checkpoint(self) -> bool:
        return any(name.startswith("seso_head.") for name in self.tensors)


def checkpoint_from_step_model(model: StepModel) -> Checkpoint:
    return Checkpoint(
        tensors={p.name: p.data.copy() for p in model.parameters()},
        config=model.config,
    )


def checkpoint_from_seso(model, table) -> Checkpoint:
    """Package a pretrained sorting model together with its codebook seed."""
    return Checkpoint(
        tensors={p.name: p.data.copy() for p in model.parameters()},
        config=model.config,
        perm_p=table.size,
        perm_seed=table.seed,
    )


def save_checkpoint(path, obj) -> None:
    """Write a Checkpoint (or a StepModel, converted on the fly)."""
    if isinstance(obj, StepModel):
        obj = checkpoint_from_step_model(obj)
    if not isinstance(obj, Checkpoint):
        raise TypeError(f"cannot checkpoint a {type(obj).__name__}")
    extra = {}
    if obj.perm_p is not None:
        extra = {"perm_p": obj.perm_p, "perm_seed": obj.perm_seed}
    config_text = model_config_to_text(obj.config, extra).encode()

    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    blob += struct.pack("<I", len(config_text))
    blob += config_text
    blob += struct.pack("<I", len(obj.tensors))
    for name, tensor in obj.tensors.items():
        encoded = name.encode()
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", tensor.ndim)
        for dim in tensor.shape:
            blob += struct.pack("<Q", dim)
        blob += np.ascontiguousarray(tensor, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise CheckpointFormatError(
                f"{self.path}: truncated at byte {self.offset}, wanted {n} more"
            )
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        (value,) = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return value


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != _MAGIC:
        raise CheckpointMagicError(f"{path}: not a checkpoint file")
    version = reader.unpack("<I")
    if version != _VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, expected {_VERSION}")
    config_text = reader.take(reader.unpack("<I")).decode()
    config, extras = model_config_from_text(config_text)

    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.unpack("<I")):
        name = reader.take(reader.unpack("<H")).decode()
        rank = reader.unpack("<B")
        dims = tuple(reader.unpack("<Q") for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        if reader.offset + 8 * count > len(reader.blob):
            raise CheckpointShapeError(
                f"{path}: tensor {name!r} declares {dims}, payload too short"
            )
        payload = reader.take(8 * count)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if reader.offset != len(reader.blob):
        raise CheckpointFormatError(
            f"{path}: {len(reader.blob) - reader.offset} trailing bytes"
        )
    return Checkpoint(
        tensors=tensors,
        config=config,
        perm_p=extras.get("perm_p"),
        perm_seed=extras.get("perm_seed"),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> StepModel:
    """Rebuild a step model carrying exactly the checkpointed tensors."""
    model = build_model(ckpt.config, seed=0)
    expected = {p.name: p for p in model.parameters()}
    unknown = set(ckpt.tensors) - set(expected)
    if unknown:
        raise UnknownParameterError(f"no such parameters in a step model: {sorted(unknown)}")
    missing = set(expected) - set(ckpt.tensors)
    if missing:
        raise UnknownParameterError(f"checkpoint lacks parameters: {sorted(missing)}")
    for name, param in expected.items():
        src = ckpt.tensors[name]
        if src.shape != param.data.shape:
            raise CheckpointShapeError(
                f"{name}: checkpoint shape {src.shape} != model shape {param.data.shape}"
            )
        param.data[...] = src
    return model


def backbone_tensors(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    """Drop whichever classification head the checkpoint carries."""
    return {
        name: tensor
        for name, tensor in ckpt.tensors.items()
        if not (name.startswith("head.") or name.startswith("seso_head."))
    }
