"""Body graph, symmetric degree normalization and per-bone edge reweighting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class SkeletonGraph:
    num_joints: int
    adjacency: np.ndarray  # (J, J), unit diagonal
    edges: tuple[tuple[int, int], ...]  # sorted, i < j

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_basis(self) -> np.ndarray:
        """(n, J, J) array; slice k has ones at both entries of bone k."""
        basis = np.zeros((self.num_edges, self.num_joints, self.num_joints), dtype=np.float32)
        for k, (i, j) in enumerate(self.edges):
            basis[k, i, j] = basis[k, j, i] = 1
        return basis


def build_skeleton_graph(num_joints: int, bones) -> SkeletonGraph:
    if num_joints < 1:
        raise ConfigError(f"need at least one joint, got {num_joints}")
    edges = set()
    for i, j in bones:
        i, j = int(i), int(j)
        if not (0 <= i < num_joints and 0 <= j < num_joints):
            raise ConfigError(f"bone ({i}, {j}) out of range for {num_joints} joints")
        if i == j:
            raise ConfigError(f"self-pair ({i}, {j}) is not a bone")
        pair = (min(i, j), max(i, j))
        if pair in edges:
            raise ConfigError(f"duplicate bone {pair}")
        edges.add(pair)
    edges = tuple(sorted(edges))
    adj = np.eye(num_joints, dtype=np.float32)
    for i, j in edges:
        adj[i, j] = adj[j, i] = 1
    adj.setflags(write=False)
    return SkeletonGraph(num_joints, adj, edges)


def normalize_adjacency(a) -> Tensor:
    """``a[i, j] / sqrt(deg_i * deg_j)`` over the last two axes.

    Accepts an array or a tensor, optionally batched; differentiable in ``a``.
    """
    a = T.as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"adjacency must be square, got shape {a.shape}")
    if np.any(a.data < 0):
        raise ContractError("adjacency entries must be non-negative")
    if not np.allclose(a.data, np.swapaxes(a.data, -1, -2), rtol=0, atol=1e-6):
        raise ContractError("adjacency must be symmetric")
    deg = a.sum(axis=-1)
    if np.any(deg.data <= 0):
        raise DegenerateInputError("adjacency has a row with zero degree")
    j = a.shape[-1]
    lead = a.shape[:-2]
    outer = T.reshape(deg, lead + (j, 1)) * T.reshape(deg, lead + (1, j))
    return T.div(a, T.power(outer, 0.5))


def apply_edge_weights(graph: SkeletonGraph, w) -> Tensor:
    """Scale each bone's two adjacency entries by its weight; the diagonal stays 1.

    ``w`` is (n,) or batched (B, n) with entries in [0, 1].
    """
    w = T.as_tensor(w)
    if w.ndim not in (1, 2) or w.shape[-1] != graph.num_edges:
        raise ContractError(f"expected {graph.num_edges} edge weights, got shape {w.shape}")
    if np.any(w.data < 0) or np.any(w.data > 1) or not np.all(np.isfinite(w.data)):
        raise ContractError("edge weights must lie in [0, 1]")
    basis = Tensor(graph.edge_basis())
    sub = "k,kij->ij" if w.ndim == 1 else "bk,kij->bij"
    return T.einsum(sub, w, basis) + Tensor(np.eye(graph.num_joints))
