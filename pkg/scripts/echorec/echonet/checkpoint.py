"""Checkpoint file: magic, version, JSON metadata, float32 parameters."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from ..errors import CheckpointError, UnsupportedVersionError

if TYPE_CHECKING:
    from .model import EchoModel, ModelConfig

CHECKPOINT_MAGIC = b"ECHC"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Model config, parameters in declaration order, and training metadata."""

    model_config: ModelConfig
    parameters: list[tuple[str, np.ndarray]]
    metadata: dict[str, Any] = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    @classmethod
    def from_model(cls, model: EchoModel, metadata: dict[str, Any] | None = None) -> Checkpoint:
        """Snapshot the model's current parameters."""
        params = [(name, value.astype(np.float32, copy=True)) for name, value in model.parameters()]
        return cls(model.config, params, dict(metadata or {}))

    def to_model(self) -> EchoModel:
        """Rebuild the network and load the stored parameters."""
        from .model import EchoModel

        model = EchoModel(self.model_config)
        expected = [(name, value.shape) for name, value in model.parameters()]
        stored = [(name, value.shape) for name, value in self.parameters]
        if expected != stored:
            raise CheckpointError("stored parameters do not match the model configuration")
        model.load_parameters([value for _, value in self.parameters])
        return model

    @property
    def class_names(self) -> list[str]:
        """Class names recorded at training time, or index strings."""
        names = self.metadata.get("class_names")
        return list(names) if names else [str(i) for i in range(self.model_config.n_classes)]


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    """Write a checkpoint; identical checkpoints produce identical bytes."""
    header = {
        "model": checkpoint.model_config.to_dict(),
        "parameters": [[name, list(value.shape)] for name, value in checkpoint.parameters],
        "metadata": checkpoint.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", checkpoint.version, len(blob)))
        f.write(blob)
        for _, value in checkpoint.parameters:
            f.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(path: Path) -> Checkpoint:
    """Read and validate a checkpoint file."""
    from .model import ModelConfig

    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"{path}: {e}") from e
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    version, meta_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version} is not supported")
    if len(data) < 12 + meta_len:
        raise CheckpointError(f"{path}: truncated metadata")
    try:
        header = json.loads(data[12 : 12 + meta_len].decode("utf-8"))
        config = ModelConfig.from_dict(header["model"])
        layout = [(str(name), tuple(int(d) for d in shape)) for name, shape in header["parameters"]]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: unreadable metadata: {e}") from e

    offset = 12 + meta_len
    expected = offset + 4 * sum(int(np.prod(shape)) for _, shape in layout)
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(data)}")

    params = []
    for name, shape in layout:
        count = int(np.prod(shape))
        value = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        params.append((name, value.astype(np.float32)))
        offset += 4 * count
    checkpoint = Checkpoint(config, params, header.get("metadata", {}), version)
    checkpoint.to_model()
    return checkpoint
