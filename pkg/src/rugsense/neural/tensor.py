"""A small reverse-mode autodiff over float64 numpy arrays.

Only the operations the models need are provided. Every op checks its output
for NaN/Inf so numerical blow-ups surface where they happen rather than as a
poisoned checkpoint later.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NumericalError(FloatingPointError):
    pass


def _check(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced by {what}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    nd = grad.ndim - len(shape)
    if nd > 0:
        grad = grad.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- basics ------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior gradients are not needed after propagation
                    node.grad = None if node.name is None else node.grad
        for node in order:
            if node.name is not None and node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise NumericalError(f"non-finite gradient for parameter {node.name!r}")

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, what: str) -> Tensor:
    _check(data, what)
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, None, tuple(p for p in parents if p.requires_grad) if req else (), backward if req else None)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), bw, "div")


def tpow(a: Tensor, p: float) -> Tensor:
    def bw(g):
        a._accum(g * p * a.data ** (p - 1))

    return _make(a.data**p, (a,), bw, "pow")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        a._accum(g * mask)

    return _make(a.data * mask, (a,), bw, "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        a._accum(g * (1.0 - out * out))

    return _make(out, (a,), bw, "tanh")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        a._accum(g * out)

    return _make(out, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    def bw(g):
        a._accum(g / a.data)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), bw, "log")


# ---------------------------------------------------------------------------
# reductions and shape


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(out, (a,), bw, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        a._accum(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))

    def bw(g):
        a._accum(np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), bw, "transpose")


def getitem(a: Tensor, idx) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum(full)

    return _make(np.asarray(a.data[idx]), (a,), bw, "getitem")


def concat(parts: Iterable[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accum(g[tuple(sl)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bw, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([reshape(p, p.shape[:axis] + (1,) + p.shape[axis:]) for p in parts], axis=axis)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            if a.ndim > 1 and b.ndim > 1:
                gb = np.swapaxes(a.data, -1, -2) @ g
            elif a.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_unbroadcast(gb, b.shape))

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# fused ops with closed-form backward


def softmax(a: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get zero weight."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)

    def bw(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), bw, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    out = x - lse
    sm = np.exp(out)

    def bw(g):
        a._accum(g - sm * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bw, "log_softmax")


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def bw(g):
        if gamma.requires_grad:
            gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accum(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
            x._accum(dx)

    return _make(out, (x, gamma, beta), bw, "layernorm")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    if not train or rate <= 0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, keep)
