"""Model checkpoint container.

Layout: magic ``VICK``, uint32 little-endian header length, a UTF-8 JSON
header carrying config/seed/epoch plus the array directory, then every
parameter and buffer as a flat little-endian float64 array, concatenated
in lexicographic name order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import nn
from .tensor import Tensor

MAGIC = b"VICK"
CHECKPOINT_VERSION = 1

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "restore_model", "MAGIC"]


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


def _model_state(model: nn.Module) -> dict:
    state = dict(model.named_parameters())
    for name, buf in model.named_buffers():
        if name in state:
            raise CheckpointError(f"buffer name {name!r} collides with a parameter")
        state[name] = buf
    return {name: (t.data if isinstance(t, Tensor) else t) for name, t in state.items()}


def save_checkpoint(path, model: nn.Module, config: dict | None = None,
                    seed: int | None = None, epoch: int | None = None) -> None:
    state = _model_state(model)
    names = sorted(state)
    header = {
        "format": "vick-checkpoint",
        "version": CHECKPOINT_VERSION,
        "config": config or {},
        "seed": seed,
        "epoch": epoch,
        "arrays": [{"name": n, "shape": list(np.shape(state[n]))} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(state[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (header dict, {name: float64 array})."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: invalid header JSON: {e}") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    arrays = {}
    offset = 8 + header_len
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(raw):
            raise CheckpointError(
                f"{path}: array {entry['name']!r} truncated "
                f"(needs {count * 8} bytes at offset {offset})"
            )
        arrays[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after arrays")
    return header, arrays


def restore_model(model: nn.Module, arrays: dict) -> None:
    """Copy checkpoint arrays into a structurally identical model, in place."""
    state = _model_state(model)
    missing = sorted(set(state) - set(arrays))
    if missing:
        raise CheckpointError(f"checkpoint missing arrays for {missing}")
    unknown = sorted(set(arrays) - set(state))
    if unknown:
        raise CheckpointError(f"checkpoint has arrays the model lacks: {unknown}")
    for name, target in state.items():
        src = arrays[name]
        if src.shape != target.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {src.shape}, model {target.shape}"
            )
        target[...] = src
