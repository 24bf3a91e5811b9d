"""First-order optimizers over named parameter tensors.

Updates replace ``param.data`` with a fresh array rather than writing in
place, so any array handed out earlier stays a valid snapshot.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .tensor import Tensor


def clip_scale(grads, max_norm: float) -> float:
    """Factor that brings the global L2 norm of ``grads`` down to ``max_norm`` (1.0 if already within)."""
    total = np.sqrt(sum(float(np.square(np.asarray(g, dtype=np.float64)).sum()) for g in grads))
    return 1.0 if total <= max_norm else max_norm / total


class Optimizer:
    kind = "base"

    def __init__(self, params: Sequence[tuple[str, Tensor]], lr: float, weight_decay: float = 0.0,
                 max_grad_norm: float | None = None):
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {weight_decay}")
        if max_grad_norm is not None and not max_grad_norm > 0:
            raise ConfigError(f"max_grad_norm must be positive, got {max_grad_norm}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_grad_norm = max_grad_norm

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.params]

    def _checked(self, grads, mode):
        if mode not in ("descent", "ascent"):
            raise ConfigError(f"mode must be 'descent' or 'ascent', got {mode!r}")
        if len(grads) != len(self.params):
            raise DimensionError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        out = []
        for (name, p), g in zip(self.params, grads):
            g = np.asarray(g)
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            g = g.astype(p.data.dtype, copy=False)
            # ascent on J is descent on -J
            out.append(-g if mode == "ascent" else g)
        if self.max_grad_norm is not None:
            norm = clip_scale(out, self.max_grad_norm)
            if norm != 1.0:
                out = [(g * g.dtype.type(norm)) for g in out]
        return out

    def step(self, grads, mode: str = "descent") -> None:
        raise NotImplementedError

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}


class SGD(Optimizer):
    """SGD with heavy-ball momentum and L2 weight decay (PyTorch semantics)."""

    kind = "sgd-momentum"

    def __init__(self, params, lr: float, weight_decay: float = 0.0, momentum: float = 0.0,
                 max_grad_norm: float | None = None):
        super().__init__(params, lr, weight_decay, max_grad_norm)
        if not 0 <= momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        self.momentum = momentum
        self.buffers = [None] * len(self.params)

    def step(self, grads, mode: str = "descent") -> None:
        grads = self._checked(grads, mode)
        for i, ((_, p), g) in enumerate(zip(self.params, grads)):
            dt = p.data.dtype.type
            d = g + dt(self.weight_decay) * p.data if self.weight_decay else g
            if self.momentum:
                buf = self.buffers[i]
                buf = d.copy() if buf is None else dt(self.momentum) * buf + d
                self.buffers[i] = buf
                d = buf
            p.data = p.data - dt(self.lr) * d

    def state_arrays(self):
        return {name: b for (name, _), b in zip(self.params, self.buffers) if b is not None}


class Adam(Optimizer):
    """Adam with bias-corrected moments; weight decay is added to the gradient."""

    kind = "adam"

    def __init__(self, params, lr: float = 1e-3, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 max_grad_norm: float | None = None):
        super().__init__(params, lr, weight_decay, max_grad_norm)
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self, grads, mode: str = "descent") -> None:
        grads = self._checked(grads, mode)
        self.t += 1
        b1, b2 = self.betas
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for i, ((_, p), g) in enumerate(zip(self.params, grads)):
            dt = p.data.dtype.type
            if self.weight_decay:
                g = g + dt(self.weight_decay) * p.data
            self.m[i] = dt(b1) * self.m[i] + dt(1 - b1) * g
            self.v[i] = dt(b2) * self.v[i] + dt(1 - b2) * g * g
            m_hat = self.m[i] / dt(c1)
            v_hat = self.v[i] / dt(c2)
            p.data = p.data - dt(self.lr) * m_hat / (np.sqrt(v_hat) + dt(self.eps))
