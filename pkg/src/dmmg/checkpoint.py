"""Checkpoint files: a JSON manifest followed by one little-endian f32 blob.

Layout::

    b"DMCK"  u32 version  u64 manifest_len  manifest (UTF-8 JSON)  blob

The manifest lists every parameter (name, shape, offset, nbytes) in blob
order and records the blob's SHA-256, so a truncated or partially written
file is rejected on load.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError
from .graph import SkeletonGraph, build_skeleton_graph
from .tensor import Tensor

MAGIC = b"DMCK"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    manifest: dict
    arrays: dict  # name -> float32 array, manifest order

    @property
    def config(self) -> dict:
        return self.manifest["config"]

    @property
    def step(self) -> int:
        return self.manifest["step"]

    def graph(self) -> SkeletonGraph:
        g = self.manifest["graph"]
        return build_skeleton_graph(g["num_joints"], [tuple(e) for e in g["edges"]])

    def group(self, prefix: str) -> dict:
        """Tensors whose names start with ``prefix/``, with the prefix stripped."""
        head = prefix + "/"
        out = {n[len(head):]: Tensor(a.copy(), name=n[len(head):])
               for n, a in self.arrays.items() if n.startswith(head)}
        if not out:
            raise FormatError(f"checkpoint has no parameters under {prefix!r}")
        return out


def encode_checkpoint(arrays: dict, config: dict, step: int, epoch: int, graph: SkeletonGraph) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": "dmmg-checkpoint",
        "version": VERSION,
        "config": config,
        "step": int(step),
        "epoch": int(epoch),
        "graph": {"num_joints": graph.num_joints, "edges": [list(e) for e in graph.edges]},
        "params": entries,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(text)) + text + blob


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size:
        raise FormatError(f"checkpoint truncated at offset {len(data)}: header needs {_HEADER.size} bytes")
    magic, version, mlen = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")
    start = _HEADER.size
    if len(data) < start + mlen:
        raise FormatError(f"checkpoint truncated at offset {len(data)}: manifest ends at {start + mlen}")
    try:
        manifest = json.loads(data[start:start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest at offset {start}: {exc}") from None
    blob = data[start + mlen:]
    if len(blob) != manifest.get("blob_bytes"):
        raise FormatError(f"blob at offset {start + mlen} holds {len(blob)} bytes, "
                          f"manifest declares {manifest.get('blob_bytes')}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("blob_sha256"):
        raise FormatError(f"blob SHA-256 mismatch (blob starts at offset {start + mlen}); file is corrupt or partial")
    arrays = {}
    for entry in manifest["params"]:
        lo, n = entry["offset"], entry["nbytes"]
        shape = tuple(entry["shape"])
        if lo + n > len(blob) or n != 4 * int(np.prod(shape, dtype=np.int64)):
            raise FormatError(f"parameter {entry['name']} at blob offset {lo} does not fit shape {shape}")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=lo) \
            .astype(np.float32).reshape(shape)
    return Checkpoint(manifest, arrays)


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, state, config: dict, graph: SkeletonGraph) -> None:
    """Persist a TrainState's parameters (online, target, both augmenters)."""
    blob = encode_checkpoint(state.named_arrays(), config, state.step, state.epoch, graph)
    atomic_write(path, blob)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def check_compatible(ckpt: Checkpoint, num_joints: int) -> None:
    j = ckpt.manifest["graph"]["num_joints"]
    if j != num_joints:
        raise DimensionError(f"checkpoint graph has {j} joints (adjacency {j}x{j}) but the dataset has "
                             f"{num_joints} joints (adjacency {num_joints}x{num_joints})")
