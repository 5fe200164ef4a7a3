"""Deterministic single-file container for model checkpoints.

Layout: 8-byte magic, little-endian u32 header length, UTF-8 JSON header
(sorted keys), then the raw little-endian array payloads back to back. The
header lists every array's name, dtype, shape and byte offset. Identical
contents always produce identical bytes, so a file's SHA-256 doubles as its
identity.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"T2PCKPT\x00"
_LEN = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def container_bytes(kind: str, version: int, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    index = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        index.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    doc = {"kind": kind, "format_version": version, "header": header, "arrays": index}
    head = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LEN.pack(len(head)) + head + b"".join(blobs)


def save_container(path: str | os.PathLike, kind: str, version: int, header: dict,
                   arrays: dict[str, np.ndarray]) -> str:
    """Write a container and return its SHA-256 hex digest."""
    data = container_bytes(kind, version, header, arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return hashlib.sha256(data).hexdigest()


def load_container(path: str | os.PathLike, kind: str, version: int) -> tuple[dict, dict[str, np.ndarray], str]:
    """Read a container; returns (header, arrays, sha256)."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    (hlen,) = _LEN.unpack_from(data, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    try:
        doc = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if doc.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {doc.get('kind')!r}")
    if doc.get("format_version") != version:
        raise CheckpointVersionError(
            f"{path}: format version {doc.get('format_version')} unsupported (expected {version})")
    base = start + hlen
    arrays = {}
    for item in doc["arrays"]:
        lo = base + item["offset"]
        hi = lo + item["nbytes"]
        if hi > len(data):
            raise CheckpointError(f"{path}: truncated payload for {item['name']}")
        arr = np.frombuffer(data[lo:hi], dtype=np.dtype(item["dtype"])).reshape(item["shape"])
        arrays[item["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return doc["header"], arrays, hashlib.sha256(data).hexdigest()


def file_sha256(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def state_to_arrays(state: dict, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}{k}": v.detach().cpu().numpy() for k, v in state.items()}


def arrays_to_state(arrays: dict[str, np.ndarray], prefix: str) -> dict:
    import torch

    return {k[len(prefix):]: torch.from_numpy(np.array(v)) for k, v in arrays.items() if k.startswith(prefix)}
