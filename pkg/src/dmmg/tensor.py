"""Dense tensors with define-by-run reverse-mode differentiation.

Every op builds a fresh node holding its parents and a closure mapping the
output gradient to one gradient per parent. Nothing is cached across forward
passes, so freezing a parameter is just a matter of not asking for its
gradient.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError, NumericError

_dtype = np.float32


def get_default_dtype():
    return _dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype new tensors are cast to.

    Used by gradient checking, which needs float64 to keep finite-difference
    roundoff well below the tolerance being tested.
    """
    global _dtype
    previous = _dtype
    _dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to the reflected Tensor op

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        for leaf, g in _run_backward(self).items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)
    __matmul__ = lambda self, other: matmul(self, other)
    __getitem__ = lambda self, idx: index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce(self, axis, "sum", keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, axis, "mean", keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce(self, axis, "max", keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _run_backward(loss: Tensor) -> dict:
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    # iterative post-order DFS; parents are emitted before children
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return leaves


def grad(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. ``params``; unreachable ones get zeros."""
    leaves = _run_backward(loss)
    by_id = {id(k): v for k, v in leaves.items()}
    out = []
    for p in params:
        g = by_id.get(id(p))
        out.append(np.zeros_like(p.data) if g is None else g.astype(p.data.dtype, copy=False))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _node(-x.data, (x,), lambda g: (-g,))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    out = x.data ** p
    return _node(out, (x,), lambda g: (g * p * x.data ** (p - 1),))


def matmul(a, b) -> Tensor:
    """Plain 2-D matrix product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def _einsum_grad(g, g_sub, other, other_sub, target_sub, target_shape):
    # every target index must be produced; ones only present in the target
    # were summed out in the forward pass and are restored by broadcasting
    avail = set(g_sub) | set(other_sub)
    kept = "".join(c for c in target_sub if c in avail)
    r = np.einsum(f"{g_sub},{other_sub}->{kept}", g, other, optimize=True)
    if kept != target_sub:
        expanded = [slice(None) if c in avail else None for c in target_sub]
        r = np.broadcast_to(r[tuple(expanded)], target_shape)
    return r


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand Einstein summation, e.g. ``einsum("ij,bjct->bict", A, H)``."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    if len(sa) != a.ndim or len(sb) != b.ndim:
        raise DimensionError(f"einsum {subscripts!r} does not match shapes {a.shape}, {b.shape}")
    if len(set(sa)) != len(sa) or len(set(sb)) != len(sb):
        raise ConfigError("einsum with repeated indices in one operand is not supported")
    extents: dict[str, int] = {}
    for sub_, shape in ((sa, a.shape), (sb, b.shape)):
        for c, n in zip(sub_, shape):
            if extents.setdefault(c, n) != n:
                raise DimensionError(f"einsum index {c!r} has extents {extents[c]} and {n}")
    out = np.einsum(subscripts, a.data, b.data, optimize=True)

    def backward(g):
        ga = _einsum_grad(g, out_sub, b.data, sb, sa, a.shape) if a.requires_grad else None
        gb = _einsum_grad(g, out_sub, a.data, sa, sb, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward)


# -------------------------------------------------------------- elementwise


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0  # subgradient at exactly 0 is 0
    return _node(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype)
    return _node(out, (x,), lambda g: (g * out * (1 - out),))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _node(x.data * x.data, (x,), lambda g: (2 * g * x.data,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def add_const(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _node(x.data + x.data.dtype.type(c), (x,), lambda g: (g,))


def elementwise_map(x, mode: str, const: float = 0.0) -> Tensor:
    if mode == "relu":
        return relu(x)
    if mode == "sigmoid":
        return sigmoid(x)
    if mode == "square":
        return square(x)
    if mode == "neg":
        return neg(x)
    if mode == "add-const":
        return add_const(x, const)
    raise ConfigError(f"unknown elementwise mode {mode!r}")


# --------------------------------------------------------------- reductions


def _norm_axes(axis, ndim) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for {ndim}-d tensor")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce(x, axis=None, mode: str = "sum", keepdims: bool = False) -> Tensor:
    """Sum / mean / max over ``axis`` (``None`` means all axes)."""
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise DegenerateInputError(f"reduction over empty extent, shape {x.shape}")
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    if mode == "sum":
        out = x.data.sum(axis=axes, keepdims=True)
        back = lambda g: (np.broadcast_to(g.reshape(kept_shape), x.shape),)
    elif mode == "mean":
        out = x.data.mean(axis=axes, keepdims=True)
        back = lambda g: (np.broadcast_to(g.reshape(kept_shape) / x.data.dtype.type(count), x.shape),)
    elif mode == "max":
        out = x.data.max(axis=axes, keepdims=True)
        hit = x.data == out
        share = hit / hit.sum(axis=axes, keepdims=True)  # ties split evenly
        back = lambda g: ((g.reshape(kept_shape) * share).astype(x.data.dtype),)
    else:
        raise ConfigError(f"unknown reduction mode {mode!r}")
    if not keepdims:
        out = out.reshape(tuple(n for i, n in enumerate(x.shape) if i not in axes))
    return _node(out, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return _node(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = log_softmax(logits, axis=-1)
    picked = index(logp, (np.arange(len(labels)), labels))
    return neg(reduce(picked, None, "mean"))


# ----------------------------------------------------------------- structure


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def index(x, idx) -> Tensor:
    """NumPy-style indexing; repeated indices accumulate in the backward pass."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(x.data[idx], (x,), backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tensors, backward)


def unit_rows(x, fallback, eps: float = 1e-8) -> Tensor:
    """L2-normalize the last axis; rows with norm < ``eps`` become ``fallback``.

    The fallback rows are constants and pass no gradient.
    """
    x = as_tensor(x)
    d = x.data
    norm = np.sqrt((d * d).sum(axis=-1, keepdims=True))
    small = norm < eps
    safe = np.where(small, 1, norm).astype(d.dtype)
    unit = d / safe
    out = np.where(small, np.asarray(fallback, dtype=d.dtype), unit)

    def backward(g):
        dot = (g * unit).sum(axis=-1, keepdims=True)
        return (np.where(small, 0, (g - unit * dot) / safe).astype(d.dtype),)

    return _node(out, (x,), backward)


# -------------------------------------------------------------- convolution


def temporal_conv1d(x, kernel, stride: int = 1) -> Tensor:
    """'Same'-padded 1-D convolution over the last axis.

    ``x`` is (N, C, T), ``kernel`` is (C_out, C, k) with odd k. Output is
    (N, C_out, ceil(T / stride)).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise DimensionError(f"temporal_conv1d shapes {x.shape} and {kernel.shape} do not align")
    k = kernel.shape[2]
    if k % 2 == 0:
        raise ConfigError(f"temporal kernel size must be odd, got {k}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    n, c, t = x.shape
    if t < 1:
        raise DegenerateInputError("temporal_conv1d needs at least one frame")
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    t_out = windows.shape[2]
    out = np.einsum("nctj,ocj->not", windows, kernel.data, optimize=True)

    def backward(g):
        gk = np.einsum("not,nctj->ocj", g, windows, optimize=True) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gw = np.einsum("not,ocj->nctj", g, kernel.data, optimize=True)
            gxp = np.zeros_like(xp)
            span = stride * (t_out - 1) + 1
            for j in range(k):
                gxp[:, :, j:j + span:stride] += gw[:, :, :, j]
            gx = gxp[:, :, pad:pad + t]
        return gx, gk

    return _node(out, (x, kernel), backward)


# -------------------------------------------------------- gradient checking


def check_gradients(f: Callable[[Tensor], Tensor], x, eps: float = 1e-6) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``f`` maps a tensor shaped like ``x`` to a scalar tensor. Both gradients
    are computed in float64. The error per coordinate is
    ``|a - n| / max(1, |a|, |n|)``.
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ConfigError(f"eps must lie in [1e-6, 1e-2], got {eps}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    with default_dtype(np.float64):
        xt = Tensor(base.copy(), requires_grad=True)
        y = f(xt)
        if not np.all(np.isfinite(y.data)):
            raise NumericError("function value is not finite")
        (analytic,) = grad(y, [xt])
        numeric = np.empty_like(base)
        flat = base.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(Tensor(base.copy())).item()
            flat[i] = orig - eps
            lo = f(Tensor(base.copy())).item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"non-finite function value near coordinate {i}")
            nflat[i] = (hi - lo) / (2 * eps)
    a = analytic.astype(np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
    return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0

