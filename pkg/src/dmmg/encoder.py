"""Spatio-temporal graph conv encoder, projection head, and the momentum twin."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor

Params = dict  # ordered name -> Tensor


@dataclass
class EncoderConfig:
    blocks: list = field(default_factory=lambda: [(3, 16, 5, 1), (16, 32, 5, 2), (32, 64, 5, 2)])
    proj_dim: int = 64

    def __post_init__(self):
        self.blocks = [tuple(int(v) for v in b) for b in self.blocks]

    @property
    def embed_dim(self) -> int:
        return self.blocks[-1][1]

    def validate(self):
        if not self.blocks:
            raise ConfigError("encoder needs at least one block")
        if self.blocks[0][0] != 3:
            raise ConfigError(f"first block must take 3 input channels, got {self.blocks[0][0]}")
        for prev, cur in zip(self.blocks, self.blocks[1:]):
            if prev[1] != cur[0]:
                raise ConfigError(f"channel chain broken between blocks {prev} and {cur}")
        for cin, cout, k, s in self.blocks:
            if k % 2 == 0:
                raise ConfigError(f"temporal kernel must be odd, got {k}")
            if min(cin, cout, k, s) < 1:
                raise ConfigError(f"invalid block {(cin, cout, k, s)}")
        if self.proj_dim < 1:
            raise ConfigError("proj_dim must be positive")


def _uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_params(cfg: EncoderConfig, seed: int) -> Params:
    """Fan-in scaled uniform weights, zero biases; encoder blocks then projector."""
    cfg.validate()
    rng = np.random.default_rng([seed, 101])
    params: Params = {}
    for i, (cin, cout, k, _) in enumerate(cfg.blocks):
        params[f"block{i}.gcn_w"] = Tensor(_uniform(rng, (cin, cout), cin), name=f"block{i}.gcn_w")
        params[f"block{i}.gcn_b"] = Tensor(np.zeros(cout), name=f"block{i}.gcn_b")
        params[f"block{i}.tcn_w"] = Tensor(_uniform(rng, (cout, cout, k), cout * k), name=f"block{i}.tcn_w")
        params[f"block{i}.tcn_b"] = Tensor(np.zeros(cout), name=f"block{i}.tcn_b")
    d = cfg.embed_dim
    params["proj.w"] = Tensor(_uniform(rng, (d, cfg.proj_dim), d), name="proj.w")
    params["proj.b"] = Tensor(np.zeros(cfg.proj_dim), name="proj.b")
    return params


def encoder_names(params: Params) -> list[str]:
    return [n for n in params if n.startswith("block")]


def projector_names(params: Params) -> list[str]:
    return [n for n in params if n.startswith("proj.")]


def encoder_forward(params: Params, x, a_norm, cfg: EncoderConfig) -> Tensor:
    """Pooled features (B, d) of a (B, J, 3, T) batch.

    ``a_norm`` is a normalized adjacency shared by the batch (J, J) or given
    per sample (B, J, J). Each block is relu(A H W + b) followed by a linear
    strided temporal conv; the next block's relu supplies the nonlinearity,
    and the pooled features stay signed.
    """
    h = T.as_tensor(x)
    a = T.as_tensor(a_norm)
    if h.ndim != 4 or h.shape[2] != 3:
        raise DimensionError(f"expected a (B, J, 3, T) batch, got {h.shape}")
    b, j = h.shape[0], h.shape[1]
    if a.shape[-2:] != (j, j) or (a.ndim == 3 and a.shape[0] != b) or a.ndim not in (2, 3):
        raise DimensionError(f"adjacency {a.shape} does not match batch {h.shape}")
    spatial = "ij,bjct->bict" if a.ndim == 2 else "bij,bjct->bict"
    for i, (cin, cout, _, stride) in enumerate(cfg.blocks):
        if h.shape[2] != cin:
            raise DimensionError(f"block {i} expects {cin} channels, got {h.shape[2]}")
        h = T.einsum("bjct,cd->bjdt", h, params[f"block{i}.gcn_w"])
        h = T.einsum(spatial, a, h)
        h = T.relu(h + T.reshape(params[f"block{i}.gcn_b"], (1, 1, cout, 1)))
        t = h.shape[3]
        h = T.temporal_conv1d(T.reshape(h, (b * j, cout, t)), params[f"block{i}.tcn_w"], stride)
        h = T.reshape(h, (b, j, cout, h.shape[2]))
        h = h + T.reshape(params[f"block{i}.tcn_b"], (1, 1, cout, 1))
    return h.mean(axis=(1, 3))


def project(params: Params, z) -> Tensor:
    return T.relu(T.matmul(z, params["proj.w"]) + params["proj.b"])


def embed(params: Params, x, a_norm, cfg: EncoderConfig) -> Tensor:
    return project(params, encoder_forward(params, x, a_norm, cfg))


def copy_params(params: Params) -> Params:
    return {n: Tensor(p.data.copy(), name=n) for n, p in params.items()}


@dataclass
class EncoderPair:
    online: Params
    target: Params
    momentum_coef: float = 0.999

    def __post_init__(self):
        if not 0 <= self.momentum_coef <= 1:
            raise ConfigError(f"momentum coefficient must lie in [0, 1], got {self.momentum_coef}")
        for n, p in self.online.items():
            if self.target[n].shape != p.shape:
                raise DimensionError(f"online/target shape mismatch for {n}")

    @classmethod
    def create(cls, cfg: EncoderConfig, seed: int, momentum_coef: float = 0.999) -> "EncoderPair":
        online = init_params(cfg, seed)
        return cls(online, copy_params(online), momentum_coef)


def momentum_update(pair: EncoderPair) -> None:
    """target <- a * target + (1 - a) * online, per parameter."""
    for name, p in pair.online.items():
        t = pair.target[name]
        dt = t.data.dtype.type
        a = dt(pair.momentum_coef)
        t.data = a * t.data + (dt(1) - a) * p.data
