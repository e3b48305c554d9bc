"""Binary checkpoint format.

Layout::

    b"GCNBERT\\0"  magic
    uint32 LE      format version
    uint64 LE      header length in bytes
    header         UTF-8 JSON (sorted keys): tensor table, config, training
                   state and the SHA-256 of the payload
    payload        raw little-endian float arrays, in tensor-table order
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .optim import AdamState

MAGIC = b"GCNBERT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    config: dict[str, Any]
    vocabulary: list[str]
    num_keypoints: int = 55
    epoch: int = 0
    best_val_top1: float = 0.0
    rng_state: dict[str, Any] = field(default_factory=dict)
    optimizer: AdamState = field(default_factory=AdamState)


def _tensor_entries(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    entries = list(ckpt.params.items())
    for name in ckpt.params:
        if name in ckpt.optimizer.m:
            entries.append((f"adam.m/{name}", ckpt.optimizer.m[name]))
            entries.append((f"adam.v/{name}", ckpt.optimizer.v[name]))
    return entries


def to_bytes(ckpt: Checkpoint) -> bytes:
    table = []
    chunks = []
    offset = 0
    for name, arr in _tensor_entries(ckpt):
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        raw = le.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": le.dtype.str,
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    opt = ckpt.optimizer
    header = {
        "format_version": FORMAT_VERSION,
        "tensors": table,
        "config": ckpt.config,
        "vocabulary": ckpt.vocabulary,
        "num_keypoints": ckpt.num_keypoints,
        "epoch": ckpt.epoch,
        "best_val_top1": ckpt.best_val_top1,
        "rng_state": ckpt.rng_state,
        "optimizer": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                      "weight_decay": opt.weight_decay, "step": opt.step},
        "payload_bytes": len(payload),
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + payload


def from_bytes(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise ChecksumError(f"{source}: truncated checkpoint")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise VersionError(f"{source}: format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ChecksumError(f"{source}: corrupt or truncated header") from None
    payload = blob[start + head_len:]
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise ChecksumError(f"{source}: payload checksum mismatch (corrupt or truncated file)")

    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        dtype = np.dtype(entry["dtype"])
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)

    opt_meta = header["optimizer"]
    optimizer = AdamState(lr=opt_meta["lr"], beta1=opt_meta["beta1"], beta2=opt_meta["beta2"],
                          eps=opt_meta["eps"], weight_decay=opt_meta["weight_decay"],
                          step=opt_meta["step"])
    params = {}
    for name, arr in tensors.items():
        if name.startswith("adam.m/"):
            optimizer.m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            optimizer.v[name[7:]] = arr
        else:
            params[name] = arr
    return Checkpoint(params=params, config=header["config"], vocabulary=header["vocabulary"],
                      num_keypoints=header["num_keypoints"], epoch=header["epoch"],
                      best_val_top1=header["best_val_top1"], rng_state=header["rng_state"],
                      optimizer=optimizer)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: checkpoint not found")
    return from_bytes(path.read_bytes(), str(path))
