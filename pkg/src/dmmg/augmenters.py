"""Learnable adversaries: a quaternion viewpoint augmenter and an edge-weight augmenter.

Both read the same descriptor of a sequence, the temporal mean of its joint
coordinates flattened to 3J values, through a two-layer ReLU MLP.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

HIDDEN = 64
IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)

# R[i, j] = sum_kl K[k, l, i, j] q_k q_l for q = (w, x, y, z); exact rotation for unit q
_QUAT_BASIS = np.zeros((4, 4, 3, 3), dtype=np.float32)
for (_k, _l, _i, _j), _v in {
    (0, 0, 0, 0): 1, (1, 1, 0, 0): 1, (2, 2, 0, 0): -1, (3, 3, 0, 0): -1,
    (0, 0, 1, 1): 1, (1, 1, 1, 1): -1, (2, 2, 1, 1): 1, (3, 3, 1, 1): -1,
    (0, 0, 2, 2): 1, (1, 1, 2, 2): -1, (2, 2, 2, 2): -1, (3, 3, 2, 2): 1,
    (1, 2, 0, 1): 1, (2, 1, 0, 1): 1, (0, 3, 0, 1): -1, (3, 0, 0, 1): -1,
    (1, 3, 0, 2): 1, (3, 1, 0, 2): 1, (0, 2, 0, 2): 1, (2, 0, 0, 2): 1,
    (1, 2, 1, 0): 1, (2, 1, 1, 0): 1, (0, 3, 1, 0): 1, (3, 0, 1, 0): 1,
    (2, 3, 1, 2): 1, (3, 2, 1, 2): 1, (0, 1, 1, 2): -1, (1, 0, 1, 2): -1,
    (1, 3, 2, 0): 1, (3, 1, 2, 0): 1, (0, 2, 2, 0): -1, (2, 0, 2, 0): -1,
    (2, 3, 2, 1): 1, (3, 2, 2, 1): 1, (0, 1, 2, 1): 1, (1, 0, 2, 1): 1,
}.items():
    _QUAT_BASIS[_k, _l, _i, _j] = _v


def _as_batch(x) -> Tensor:
    x = T.as_tensor(x)
    if x.ndim == 3:
        x = T.reshape(x, (1,) + x.shape)
    if x.ndim != 4 or x.shape[2] != 3:
        raise DimensionError(f"expected (J, 3, T) or (B, J, 3, T), got {x.shape}")
    return x


def descriptor(x) -> Tensor:
    """(B, 3J) temporal mean of the coordinates."""
    x = _as_batch(x)
    b, j = x.shape[0], x.shape[1]
    return T.reshape(x.mean(axis=3), (b, 3 * j))


def _mlp_init(seed: int, tag: int, in_dim: int, out_dim: int, out_bias, out_scale: float = 0.0) -> dict:
    rng = np.random.default_rng([seed, tag])
    bound = math.sqrt(6.0 / in_dim)
    w1 = rng.uniform(-bound, bound, size=(in_dim, HIDDEN))
    w2 = rng.uniform(-out_scale, out_scale, size=(HIDDEN, out_dim)) if out_scale else np.zeros((HIDDEN, out_dim))
    return {
        "w1": Tensor(w1, name="w1"),
        "b1": Tensor(np.zeros(HIDDEN), name="b1"),
        "w2": Tensor(w2, name="w2"),
        "b2": Tensor(np.asarray(out_bias, dtype=np.float32), name="b2"),
    }


def _mlp(params: dict, d: Tensor) -> Tensor:
    h = T.relu(T.matmul(d, params["w1"]) + params["b1"])
    return T.matmul(h, params["w2"]) + params["b2"]


def init_skeleton_augmenter(num_joints: int, seed: int, out_scale: float = 1e-2) -> dict:
    # the output bias is the identity quaternion and the last layer is small
    # but not zero: at the exact identity both views embed identically, the
    # positive distance has zero gradient, and the adversary could never move
    return _mlp_init(seed, 201, 3 * num_joints, 4, IDENTITY_QUAT, out_scale)


def init_graph_augmenter(num_joints: int, num_edges: int, seed: int) -> dict:
    return _mlp_init(seed, 202, 3 * num_joints, num_edges, np.zeros(num_edges))


def predict_quaternion(params: dict, x, max_angle: float | None = None) -> Tensor:
    """(B, 4) unit quaternions; a zero raw output maps to the identity.

    With ``max_angle`` (radians, in (0, pi)) the rotation is squashed towards
    the identity: q is flipped into the w >= 0 hemisphere, w is raised by
    cot(max_angle / 2) and the result renormalized, so the half-angle
    atan(|v| / (w + k)) stays below max_angle / 2.
    """
    q = T.unit_rows(_mlp(params, descriptor(x)), IDENTITY_QUAT, eps=1e-8)
    if max_angle is None:
        return q
    if not 0 < max_angle < math.pi:
        raise ContractError(f"max_angle must lie in (0, pi), got {max_angle}")
    sign = np.where(q.data[:, :1] < 0, -1, 1).astype(q.data.dtype)
    lift = IDENTITY_QUAT / math.tan(max_angle / 2)
    return T.unit_rows(q * sign + lift.astype(q.data.dtype), IDENTITY_QUAT, eps=1e-8)


def predict_edge_weights(params: dict, x) -> Tensor:
    """(B, n) per-bone weights in (0, 1)."""
    return T.sigmoid(_mlp(params, descriptor(x)))


def quaternion_matrix(q) -> Tensor:
    """(B, 3, 3) rotation matrices of (B, 4) quaternions (w, x, y, z)."""
    q = T.as_tensor(q)
    if q.ndim == 1:
        q = T.reshape(q, (1, 4))
    outer = T.einsum("bk,bl->bkl", q, q)
    return T.einsum("bkl,klij->bij", outer, Tensor(_QUAT_BASIS))


def rotate_sequence(x, q, check_unit: bool = True) -> Tensor:
    """Rotate every joint of every frame by the sequence's quaternion.

    ``x`` is (J, 3, T) with q of shape (4,), or (B, J, 3, T) with q (B, 4).
    """
    q = T.as_tensor(q)
    single = T.as_tensor(x).ndim == 3
    xb = _as_batch(x)
    qb = T.reshape(q, (1, 4)) if q.ndim == 1 else q
    if qb.shape != (xb.shape[0], 4):
        raise DimensionError(f"quaternions {q.shape} do not match batch {xb.shape}")
    if check_unit:
        norms = np.sqrt((qb.data.astype(np.float64) ** 2).sum(axis=1))
        if np.any(np.abs(norms - 1) > 1e-5):
            raise ContractError(f"quaternion must have unit norm, got norms {norms}")
    out = T.einsum("bij,bnjt->bnit", quaternion_matrix(qb), xb)
    return T.reshape(out, out.shape[1:]) if single else out


def conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float32)
    return q * np.array([1, -1, -1, -1], dtype=np.float32)


def random_unit_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniformly distributed rotations (normalized 4-D Gaussians)."""
    q = rng.normal(size=(n, 4))
    return (q / np.linalg.norm(q, axis=1, keepdims=True)).astype(np.float32)
