"""Deterministic checkpoint container.

Layout: 4-byte magic, 8-byte little-endian header length, JSON header
(sorted keys), then raw C-contiguous little-endian tensor bytes in header
order. Writing the same tensors twice produces identical bytes, which is
the property torch.save cannot give (pickle + zip metadata), and the
explicit manifest lets topology errors name every offending tensor.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptFileError, TopologyMismatchError, VersionMismatchError

MAGIC = b"DSCK"
FORMAT_VERSION = 1


def save_container(path: str | Path, tensors: dict[str, np.ndarray],
                   meta: dict | None = None, version: int = FORMAT_VERSION) -> None:
    names = sorted(tensors)
    manifest = []
    blobs = []
    for name in names:
        # np.ascontiguousarray would promote 0-d arrays to 1-d
        arr = np.asarray(tensors[name], order="C")
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        manifest.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {"version": version, "meta": meta or {}, "tensors": manifest}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CorruptFileError(f"{path}: not a checkpoint container (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[4:12])
    if len(raw) < 12 + header_len:
        raise CorruptFileError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + header_len])
    except json.JSONDecodeError as e:
        raise CorruptFileError(f"{path}: unreadable header ({e})") from e
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {header.get('version')}, expected {FORMAT_VERSION}")
    tensors = {}
    offset = 12 + header_len
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        nbytes = dtype.itemsize * count
        if offset + nbytes > len(raw):
            raise CorruptFileError(f"{path}: truncated payload at tensor '{entry['name']}'")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
        offset += nbytes
    if offset != len(raw):
        raise CorruptFileError(f"{path}: {len(raw) - offset} trailing bytes")
    return header, tensors


def module_tensors(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: t.detach().cpu().numpy() for name, t in module.state_dict().items()}


def load_module_tensors(module: torch.nn.Module, tensors: dict[str, np.ndarray],
                        context: str = "checkpoint") -> None:
    """Copy tensors into a module, naming every mismatch."""
    state = module.state_dict()
    problems = []
    for name in sorted(set(tensors) - set(state)):
        problems.append(f"unexpected tensor '{name}'")
    for name in sorted(set(state) - set(tensors)):
        problems.append(f"missing tensor '{name}'")
    for name in sorted(set(state) & set(tensors)):
        if tuple(state[name].shape) != tuple(tensors[name].shape):
            problems.append(f"shape mismatch for '{name}': "
                            f"{tuple(tensors[name].shape)} vs {tuple(state[name].shape)}")
    if problems:
        raise TopologyMismatchError(f"{context}: " + "; ".join(problems))
    with torch.no_grad():
        for name, param in state.items():
            param.copy_(torch.from_numpy(np.ascontiguousarray(tensors[name])))
    module.load_state_dict(state)
