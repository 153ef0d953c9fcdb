"""Bridge to the optional native metrics kernel (node process in kernel/).

The kernel is a drop-in accelerator for the instance metrics and the
Hausdorff distance. It speaks a tiny binary protocol: each request frame
is a 16-byte header (magic "LMRQ", op, flags, height, width, little
endian) followed by the two row-major int32 label buffers; each response
is one JSON line carrying the result plus the kernel-side compute time
in nanoseconds. Single label maps are stored on disk as "LMAP" files
with the same buffer layout.

Everything here degrades gracefully: when node or the kernel build is
missing, resolve_backend falls back to the reference implementations.
"""

from __future__ import annotations

import json
import os
import shutil
import struct
import subprocess
from pathlib import Path

import numpy as np

from . import metrics
from .errors import (CorruptFileError, DualsegError, EmptyMaskError, MissingFileError,
                     ParseError, ShapeMismatchError)
from .metrics import filter_by_class

FRAME_MAGIC = b"LMRQ"
MAP_MAGIC = b"LMAP"
OPS = {"aji": 1, "pq": 2, "f1": 3, "hausdorff": 4, "contingency": 5, "all": 6}
ERROR_TYPES = {
    "shape_mismatch": ShapeMismatchError,
    "empty_mask": EmptyMaskError,
    "bad_request": ParseError,
    "bad_file": CorruptFileError,
}


def default_kernel_dir() -> Path:
    env = os.environ.get("DUALSEG_KERNEL")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "kernel"


def kernel_entry(kernel_dir: Path | None = None) -> Path:
    return (kernel_dir or default_kernel_dir()) / "dist" / "cli.js"


def kernel_available(kernel_dir: Path | None = None) -> bool:
    return shutil.which("node") is not None and kernel_entry(kernel_dir).is_file()


# -- on-disk label maps -------------------------------------------------------


def write_label_map(path: str | Path, ids: np.ndarray) -> None:
    arr = np.ascontiguousarray(ids, dtype="<i4")
    if arr.ndim != 2:
        raise ShapeMismatchError(f"label map must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(MAP_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def read_label_map(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAP_MAGIC:
        raise CorruptFileError(f"{path}: not a label-map file")
    h, w = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * h * w:
        raise CorruptFileError(f"{path}: expected {h}x{w} int32 payload")
    return np.frombuffer(raw, dtype="<i4", offset=12).reshape(h, w).copy()


# -- persistent kernel process ------------------------------------------------


class KernelClient:
    """Synchronous request/response loop against one kernel process."""

    def __init__(self, kernel_dir: Path | None = None):
        self.entry = kernel_entry(kernel_dir)
        if not kernel_available(kernel_dir):
            raise MissingFileError(
                f"metrics kernel not available (need node on PATH and {self.entry})")
        self._proc: subprocess.Popen | None = None
        self.last_ns = 0           # kernel-side compute time of the last request
        self.total_ns = 0

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                ["node", str(self.entry), "serve"],
                stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return self._proc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self) -> "KernelClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request(self, op: str, gt: np.ndarray, pred: np.ndarray) -> dict:
        if gt.shape != pred.shape:
            raise ShapeMismatchError(f"gt {gt.shape} vs pred {pred.shape}")
        if gt.ndim != 2:
            raise ShapeMismatchError(f"label maps must be 2-D, got shape {gt.shape}")
        proc = self._ensure()
        header = struct.pack("<4sBBHII", FRAME_MAGIC, OPS[op], 0, 0,
                             gt.shape[0], gt.shape[1])
        proc.stdin.write(header)
        proc.stdin.write(np.ascontiguousarray(gt, dtype="<i4").tobytes())
        proc.stdin.write(np.ascontiguousarray(pred, dtype="<i4").tobytes())
        proc.stdin.flush()
        line = proc.stdout.readline()
        if not line:
            self.close()
            raise DualsegError("metrics kernel exited unexpectedly")
        reply = json.loads(line)
        if not reply.get("ok"):
            error_type = ERROR_TYPES.get(reply.get("code", ""), DualsegError)
            raise error_type(f"kernel: {reply.get('message', 'unknown error')}")
        self.last_ns = int(reply.get("ns", 0))
        self.total_ns += self.last_ns
        return reply["result"]

    # same call signatures as the reference implementations

    def aji(self, pred_ids: np.ndarray, gt_ids: np.ndarray) -> float:
        return float(self.request("aji", gt_ids, pred_ids)["aji"])

    def object_f1(self, pred_ids: np.ndarray, gt_ids: np.ndarray, *,
                  pred_classes: dict[int, int] | None = None,
                  gt_classes: dict[int, int] | None = None,
                  class_id: int | None = None) -> float:
        if class_id is not None:
            pred_ids = filter_by_class(pred_ids, pred_classes or {}, class_id)
            gt_ids = filter_by_class(gt_ids, gt_classes or {}, class_id)
        return float(self.request("f1", gt_ids, pred_ids)["f1"])

    def panoptic_quality(self, pred_ids: np.ndarray, gt_ids: np.ndarray, *,
                         pred_classes: dict[int, int] | None = None,
                         gt_classes: dict[int, int] | None = None,
                         class_id: int | None = None) -> tuple[float, float, float]:
        if class_id is not None:
            pred_ids = filter_by_class(pred_ids, pred_classes or {}, class_id)
            gt_ids = filter_by_class(gt_ids, gt_classes or {}, class_id)
        r = self.request("pq", gt_ids, pred_ids)
        return float(r["pq"]), float(r["sq"]), float(r["rq"])

    def hausdorff(self, pred: np.ndarray, gt: np.ndarray, class_id: int) -> float:
        p = (pred == class_id).astype(np.int32)
        g = (gt == class_id).astype(np.int32)
        return float(self.request("hausdorff", g, p)["hausdorff"])

    def all_metrics(self, gt_ids: np.ndarray, pred_ids: np.ndarray) -> dict:
        return self.request("all", gt_ids, pred_ids)

    def contingency(self, gt_ids: np.ndarray, pred_ids: np.ndarray) -> dict:
        return self.request("contingency", gt_ids, pred_ids)


# -- backend selection --------------------------------------------------------

_client: KernelClient | None = None


def resolve_backend(name: str):
    """Return the metric function provider for a config's metrics_backend.

    "reference" gives the pure-python module; "kernel" gives a shared
    KernelClient, or the reference when the kernel is not built.
    """
    if name == "reference":
        return metrics
    if name != "kernel":
        raise ParseError(f"unknown metrics backend '{name}'")
    global _client
    if _client is None:
        if not kernel_available():
            return metrics
        _client = KernelClient()
    return _client
