"""Checkpoint serialisation.

Binary layout: an 8-byte magic string and a format version, a textual
metadata block of ``key: value`` lines (config fields plus free-form run
metadata such as seed, epoch and validation-accuracy history), then the
named parameter tensors as little-endian IEEE-754 single-precision blobs.
Round trips are bit-exact for float32 models.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Classifier, ClassifierConfig

__all__ = ["ModelCheckpoint", "CheckpointError", "save_checkpoint", "load_checkpoint"]

_MAGIC = b"CHANCKPT"
_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class ModelCheckpoint:
    config: ClassifierConfig
    parameters: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, arr in self.parameters.items():
            if name.endswith("running_var") and (np.asarray(arr) < 0).any():
                raise CheckpointError(f"negative running variance in {name}")

    @classmethod
    def from_model(cls, model: Classifier, metadata: dict | None = None) -> "ModelCheckpoint":
        meta = {str(k): str(v) for k, v in (metadata or {}).items()}
        return cls(model.config, model.clone_parameters(), meta)

    def to_model(self, dtype=np.float32) -> Classifier:
        model = Classifier(self.config, np.random.default_rng(0), dtype)
        model.load_parameter_dict(self.parameters)
        return model


_CONFIG_KEYS = ("input_side", "conv_widths", "dense_width", "leaky_slope", "head")


def _encode_meta(ckpt: ModelCheckpoint) -> bytes:
    cfg = ckpt.config
    lines = [
        f"input_side: {cfg.input_side}",
        f"conv_widths: {','.join(map(str, cfg.conv_widths))}",
        f"dense_width: {cfg.dense_width}",
        f"leaky_slope: {cfg.leaky_slope!r}",
        f"head: {cfg.head}",
    ]
    for key, value in sorted(ckpt.metadata.items()):
        if key in _CONFIG_KEYS:
            raise CheckpointError(f"metadata key {key!r} collides with a config field")
        if "\n" in value:
            raise CheckpointError("metadata values must be single-line")
        lines.append(f"{key}: {value}")
    return "\n".join(lines).encode("utf-8")


def _decode_meta(blob: bytes) -> tuple[ClassifierConfig, dict[str, str]]:
    pairs = {}
    for line in blob.decode("utf-8").splitlines():
        key, _, value = line.partition(": ")
        pairs[key] = value
    try:
        cfg = ClassifierConfig(
            input_side=int(pairs.pop("input_side")),
            conv_widths=tuple(int(w) for w in pairs.pop("conv_widths").split(",")),
            dense_width=int(pairs.pop("dense_width")),
            leaky_slope=float(pairs.pop("leaky_slope")),
            head=pairs.pop("head"),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint metadata: {exc}") from exc
    return cfg, pairs


def save_checkpoint(ckpt: ModelCheckpoint | Classifier, path) -> None:
    if isinstance(ckpt, Classifier):
        ckpt = ModelCheckpoint.from_model(ckpt)
    meta = _encode_meta(ckpt)
    parts = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<I", len(meta)), meta]
    params = ckpt.parameters
    parts.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(
                f"truncated checkpoint: needed {n} bytes at offset {self.pos}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> ModelCheckpoint:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(8) != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = reader.unpack("<I")
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = reader.unpack("<I")
    config, metadata = _decode_meta(reader.take(meta_len))
    (n_params,) = reader.unpack("<I")
    params = {}
    for _ in range(n_params):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = reader.take(count * 4)
        params[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    ckpt = ModelCheckpoint(config, params, metadata)
    # Fail fast on config/blob inconsistency, naming the offending tensor.
    ckpt.to_model()
    return ckpt


def load_model(path, dtype=np.float32) -> Classifier:
    return load_checkpoint(path).to_model(dtype)
