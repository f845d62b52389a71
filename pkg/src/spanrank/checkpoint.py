"""Binary checkpoint container.

Layout: 8-byte magic ``SPRKCKPT``, little-endian uint32 format version,
little-endian uint32 header length, UTF-8 JSON header, then each tensor's data
as little-endian float32 in header order. The header records the encoder
config, the vocabulary hash, and per-tensor name/shape/offset.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, ModelParams

MAGIC = b"SPRKCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, vocab_hash: str, extra: dict | None = None) -> None:
    index = []
    offset = 0
    for name, arr in params.items():
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    header = {
        "config": params.config.to_dict(),
        "vocab_hash": vocab_hash,
        "tensors": index,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for _, arr in params.items():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_header(path) -> dict:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        version, n = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        return json.loads(f.read(n).decode("utf-8"))


def load_checkpoint(
    path, expected_vocab_hash: str | None = None, expected_config: EncoderConfig | None = None
) -> tuple[ModelParams, dict]:
    """Load params; refuses on vocabulary-hash or config mismatch."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, n = struct.unpack("<II", raw[len(MAGIC) : len(MAGIC) + 8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + n].decode("utf-8"))
    config = EncoderConfig(**header["config"])
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise CheckpointError("checkpoint was trained with a different vocabulary")
    if expected_config is not None and expected_config != config:
        raise CheckpointError(f"checkpoint config {config} does not match {expected_config}")
    body = start + n
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        lo = body + entry["offset"]
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=lo)
        tensors[entry["name"]] = data.reshape(entry["shape"]).astype(np.float32)
    return ModelParams(config, tensors), header
