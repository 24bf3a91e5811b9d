"""Online-triplet hinge estimator of agreement between original and augmented embeddings.

For anchors ``z1`` (originals) and positives ``z2`` (their augmented views)::

    I = sum_i [ |z1_i - z1_neg(i)|^2 - |z1_i - z2_i|^2 + margin ]_+

where ``neg(i)`` is the nearest other anchor under hard mining, or every
other anchor otherwise. Embeddings are L2-normalized first unless the
config turns that off. The adversaries minimize I; the encoder minimizes
``gamma - I``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DegenerateInputError, DimensionError
from .tensor import Tensor


@dataclass
class TripletConfig:
    margin: float = 1.0
    gamma: float = 10.0
    hard_mining: bool = True
    # project embeddings onto the unit sphere first; the hinge sum is
    # unbounded above, so raw embeddings let the encoder win by scaling up
    normalize: bool = True

    def validate(self):
        if not self.margin > 0:
            raise ConfigError(f"margin must be positive, got {self.margin}")


def pairwise_sq_dist(a, b) -> Tensor:
    """(N, M) squared Euclidean distances, computed from explicit differences."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cannot compare embeddings of shapes {a.shape} and {b.shape}")
    n, p = a.shape
    m = b.shape[0]
    diff = T.reshape(a, (n, 1, p)) - T.reshape(b, (1, m, p))
    return T.square(diff).sum(axis=2)


def _check_batch(z1: Tensor, z2: Tensor):
    if z1.shape != z2.shape or z1.ndim != 2:
        raise DimensionError(f"anchor/positive shapes differ: {z1.shape} vs {z2.shape}")
    if z1.shape[0] < 2:
        raise DegenerateInputError("need at least 2 samples so every anchor has a negative")


def mine_hard_pairs(z1, z2) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor (positive index, negative index).

    Each anchor has exactly one positive, its own augmented view, so the
    hardest positive is always ``i``. The negative is the nearest other
    anchor, ties going to the lowest index.
    """
    z1, z2 = T.as_tensor(z1), T.as_tensor(z2)
    _check_batch(z1, z2)
    n = z1.shape[0]
    d = pairwise_sq_dist(z1.data, z1.data).data.copy()
    np.fill_diagonal(d, np.inf)
    return np.arange(n), np.argmin(d, axis=1)


def mi_estimate(z1, z2, cfg: TripletConfig) -> Tensor:
    """Scalar hinge sum; mined indices are constants for differentiation."""
    z1, z2 = T.as_tensor(z1), T.as_tensor(z2)
    _check_batch(z1, z2)
    if cfg.normalize:
        zero = np.zeros(z1.shape[1])
        z1, z2 = T.unit_rows(z1, zero, 1e-12), T.unit_rows(z2, zero, 1e-12)
    if cfg.hard_mining:
        pos, neg = mine_hard_pairs(z1.data, z2.data)
        d_pos = T.square(z1 - T.index(z2, pos)).sum(axis=1)
        d_neg = T.square(z1 - T.index(z1, neg)).sum(axis=1)
        return T.relu(T.add_const(d_neg - d_pos, cfg.margin)).sum()
    n = z1.shape[0]
    d_pos = T.square(z1 - z2).sum(axis=1)
    d_all = pairwise_sq_dist(z1, z1)
    terms = T.relu(T.add_const(d_all - T.reshape(d_pos, (n, 1)), cfg.margin))
    off_diag = Tensor(1 - np.eye(n))
    return (terms * off_diag).sum()


def game_losses(z1, z2, cfg: TripletConfig) -> tuple[Tensor, Tensor]:
    """(L_min, L_max) = (I, gamma - I)."""
    info = mi_estimate(z1, z2, cfg)
    return info, T.sub(cfg.gamma, info)
