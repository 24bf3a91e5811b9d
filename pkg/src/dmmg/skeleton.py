"""Skeleton sequences, joint/motion streams, synthetic actions and the SKL1 file format.

A sequence is a float32 array shaped (J, 3, T): joints, xyz, frames.
Batches add a leading axis.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError

# pelvis, chest, head; left/right elbow+hand hang off the chest,
# left/right knee+foot off the pelvis
BODY11_BONES = [(0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7), (7, 8), (0, 9), (9, 10)]
_BODY11_REST = np.array([
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, 0.3, 0.0],
    [-0.3, 0.0, 0.0],
    [-0.28, 0.0, 0.0],
    [0.3, 0.0, 0.0],
    [0.28, 0.0, 0.0],
    [-0.05, -0.45, 0.0],
    [0.0, -0.42, 0.0],
    [0.05, -0.45, 0.0],
    [0.0, -0.42, 0.0],
], dtype=np.float64)


def default_bones(num_joints: int) -> list[tuple[int, int]]:
    """Bone list of the articulated tree used by the synthetic generator."""
    if num_joints == 11:
        return list(BODY11_BONES)
    return [((i - 1) // 2, i) for i in range(1, num_joints)]


def _parents(num_joints: int) -> list[int]:
    parent = [-1] * num_joints
    for i, j in default_bones(num_joints):
        parent[j] = i
    return parent


def _rest_offsets(num_joints: int) -> np.ndarray:
    if num_joints == 11:
        return _BODY11_REST
    # generic binary tree: children fan out below their parent
    rest = np.zeros((num_joints, 3))
    for j in range(1, num_joints):
        angle = math.pi * (0.25 + 0.5 * (j % 2)) + 0.3 * ((j - 1) // 2)
        rest[j] = 0.3 * np.array([math.cos(angle), -math.sin(angle), 0.0])
    return rest


def check_sequence(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3 or x.shape[1] != 3 or x.shape[0] < 1 or x.shape[2] < 1:
        raise DimensionError(f"expected a (J, 3, T) sequence, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DimensionError("sequence contains non-finite coordinates")
    return x


def motion_stream(x: np.ndarray) -> np.ndarray:
    """Frame-to-frame joint displacement; frame 0 is zero so T is preserved.

    Works on a single (J, 3, T) sequence or any batch with frames last.
    """
    x = np.asarray(x, dtype=np.float32)
    out = np.zeros_like(x)
    out[..., 1:] = x[..., 1:] - x[..., :-1]
    return out


def resample_temporal(x: np.ndarray, target_t: int) -> np.ndarray:
    """Linearly interpolate frames onto ``target_t`` evenly spaced positions."""
    if target_t < 1:
        raise ConfigError(f"target frame count must be >= 1, got {target_t}")
    x = np.asarray(x, dtype=np.float32)
    t = x.shape[-1]
    if t == target_t:
        return x.copy()
    if t == 1:
        return np.repeat(x, target_t, axis=-1)
    pos = np.linspace(0.0, t - 1, target_t) if target_t > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(int), t - 2)
    frac = (pos - lo).astype(np.float32)
    return x[..., lo] * (1 - frac) + x[..., lo + 1] * frac


def center_sequence(x: np.ndarray, root_joint: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if not 0 <= root_joint < x.shape[-3]:
        raise ConfigError(f"root joint {root_joint} out of range for {x.shape[-3]} joints")
    return x - x[..., root_joint:root_joint + 1, :, :]


def to_stream(x: np.ndarray, stream: str) -> np.ndarray:
    if stream == "joint":
        return np.asarray(x, dtype=np.float32)
    if stream == "motion":
        return motion_stream(x)
    raise ConfigError(f"unknown stream {stream!r}")


@dataclass
class LabeledDataset:
    sequences: np.ndarray  # (N, J, 3, T) float32
    labels: np.ndarray  # (N,) int64
    num_classes: int
    split_tag: str = "train"

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.sequences.ndim != 4 or self.sequences.shape[2] != 3:
            raise DimensionError(f"sequences must be (N, J, 3, T), got {self.sequences.shape}")
        if len(self.labels) != len(self.sequences):
            raise DimensionError(f"{len(self.labels)} labels for {len(self.sequences)} sequences")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def num_joints(self) -> int:
        return self.sequences.shape[1]

    @property
    def num_frames(self) -> int:
        return self.sequences.shape[3]

    def subset(self, indices) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.sequences[indices], self.labels[indices], self.num_classes, self.split_tag)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (self.num_classes == other.num_classes
                and self.sequences.shape == other.sequences.shape
                and np.array_equal(self.sequences.view(np.uint32), other.sequences.view(np.uint32))
                and np.array_equal(self.labels, other.labels))


@dataclass
class SyntheticConfig:
    seed: int = 7
    num_classes: int = 8
    sequences_per_class: int = 37
    joints: int = 11
    frames: int = 32
    viewpoint_jitter: float = math.pi / 8
    noise_std: float = 0.01

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.sequences_per_class < 2:
            raise ConfigError("sequences_per_class must be >= 2 to fill both splits")
        if self.joints < 2 or self.frames < 1:
            raise ConfigError("need at least 2 joints and 1 frame")
        if self.noise_std < 0 or self.viewpoint_jitter < 0:
            raise ConfigError("noise_std and viewpoint_jitter must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def axis_angle_matrix(axis: np.ndarray, angle) -> np.ndarray:
    """Rodrigues rotation; ``angle`` may be an array, giving stacked matrices."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=np.float64)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * k + (1 - c) * (k @ k)


def _random_axis(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _class_motion(cfg: SyntheticConfig, label: int) -> np.ndarray:
    """Canonical (J, 3, T) sequence for one class: hierarchical sinusoidal joint rotations."""
    rng = np.random.default_rng([cfg.seed, 0, label])
    j_count, t_count = cfg.joints, cfg.frames
    parent = _parents(j_count)
    rest = _rest_offsets(j_count)
    t = np.arange(t_count) / t_count
    local = np.empty((j_count, t_count, 3, 3))
    for j in range(j_count):
        axis = _random_axis(rng)
        amp = rng.uniform(0.3, 1.2)
        freq = rng.choice([0.5, 1.0, 1.5, 2.0])
        phase = rng.uniform(0, 2 * math.pi)
        local[j] = axis_angle_matrix(axis, amp * np.sin(2 * math.pi * freq * t + phase))
    glob = np.empty_like(local)
    pos = np.zeros((j_count, t_count, 3))
    # parents precede children in default_bones, so one forward sweep suffices
    for j in range(j_count):
        p = parent[j]
        if p < 0:
            glob[j] = local[j]
            continue
        glob[j] = glob[p] @ local[j]
        pos[j] = pos[p] + np.einsum("tij,j->ti", glob[p], rest[j])
    return pos.transpose(0, 2, 1)


def generate_synthetic_dataset(cfg: SyntheticConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Train/test split (2:1 per class) of rotated, noisy class motion patterns."""
    cfg.validate()
    n_train = math.ceil(2 * cfg.sequences_per_class / 3)
    if n_train >= cfg.sequences_per_class:
        n_train = cfg.sequences_per_class - 1
    train_x, train_y, test_x, test_y = [], [], [], []
    for label in range(cfg.num_classes):
        base = _class_motion(cfg, label)
        for i in range(cfg.sequences_per_class):
            rng = np.random.default_rng([cfg.seed, 1, label, i])
            angle = rng.uniform(0, cfg.viewpoint_jitter)
            rot = axis_angle_matrix(_random_axis(rng), angle)
            seq = np.einsum("ij,njt->nit", rot, base)
            seq = seq + rng.normal(scale=cfg.noise_std, size=seq.shape) if cfg.noise_std else seq
            seq = seq.astype(np.float32)
            if i < n_train:
                train_x.append(seq)
                train_y.append(label)
            else:
                test_x.append(seq)
                test_y.append(label)
    return (LabeledDataset(np.stack(train_x), train_y, cfg.num_classes, "train"),
            LabeledDataset(np.stack(test_x), test_y, cfg.num_classes, "test"))


# ------------------------------------------------------------------ SKL1

SKL_MAGIC = b"SKL1"
SKL_VERSION = 1
_HEADER = struct.Struct("<4s6I")


def encode_skl(ds: LabeledDataset) -> bytes:
    n, j, c, t = ds.sequences.shape
    parts = [_HEADER.pack(SKL_MAGIC, SKL_VERSION, n, j, c, t, ds.num_classes)]
    coords = ds.sequences.astype("<f4", copy=False)
    for label, seq in zip(ds.labels, coords):
        parts.append(struct.pack("<I", int(label)))
        parts.append(seq.tobytes(order="C"))
    return b"".join(parts)


def decode_skl(blob: bytes, split_tag: str = "train") -> LabeledDataset:
    if len(blob) < _HEADER.size:
        raise FormatError(f"truncated header at offset {len(blob)}: need {_HEADER.size} bytes")
    magic, version, n, j, c, t, num_classes = _HEADER.unpack_from(blob, 0)
    if magic != SKL_MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    if version != SKL_VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if c != 3:
        raise FormatError(f"channel count {c} at offset 16, expected 3")
    if num_classes < 1:
        raise FormatError("num_classes must be >= 1 at offset 24")
    record = 4 + 4 * j * c * t
    expected = _HEADER.size + n * record
    if len(blob) < expected:
        missing_at = _HEADER.size + (len(blob) - _HEADER.size) // record * record
        raise FormatError(f"truncated payload at offset {missing_at}: file has {len(blob)} bytes, "
                          f"{expected} required")
    if len(blob) > expected:
        raise FormatError(f"{len(blob) - expected} trailing bytes at offset {expected}")
    seqs = np.empty((n, j, c, t), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    off = _HEADER.size
    for i in range(n):
        (label,) = struct.unpack_from("<I", blob, off)
        if label >= num_classes:
            raise FormatError(f"label {label} >= num_classes {num_classes} at offset {off}")
        labels[i] = label
        seqs[i] = np.frombuffer(blob, dtype="<f4", count=j * c * t, offset=off + 4).reshape(j, c, t)
        off += record
    return LabeledDataset(seqs, labels, num_classes, split_tag)


def write_skl(ds: LabeledDataset, path) -> None:
    Path(path).write_bytes(encode_skl(ds))


def read_skl(path, split_tag: str = "train") -> LabeledDataset:
    return decode_skl(Path(path).read_bytes(), split_tag)
