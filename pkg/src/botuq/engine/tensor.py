"""Reverse-mode automatic differentiation over dense numpy arrays.

Every primitive records its inputs and a closure that pushes the upstream
gradient into them.  ``backward`` linearises the graph into a tape in
topological order and replays it in reverse.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "_freed", "name")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._freed = False
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.values.shape)
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(values: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = lambda: backward_fn(out.grad)
    return out


# elementwise arithmetic -----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.values + b.values, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.values - b.values, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.values, b.shape))

    return _make(a.values * b.values, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_v = a.values / b.values

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.values, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out_v / b.values, b.shape))

    return _make(out_v, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.values, (a,), lambda g: a._accum(-g))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.values ** 2, (a,), lambda g: a._accum(2.0 * a.values * g))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.values.T)
        if b.requires_grad:
            b._accum(a.values.T @ g)

    return _make(a.values @ b.values, (a, b), bw)


# unary nonlinearities -------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    v = np.exp(a.values)
    return _make(v, (a,), lambda g: a._accum(g * v))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.values), (a,), lambda g: a._accum(g / a.values))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    v = np.tanh(a.values)
    return _make(v, (a,), lambda g: a._accum(g * (1.0 - v * v)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    v = special.expit(a.values)
    return _make(v, (a,), lambda g: a._accum(g * v * (1.0 - v)))


def log_sigmoid(a) -> Tensor:
    a = as_tensor(a)
    v = -np.logaddexp(0.0, -a.values)
    return _make(v, (a,), lambda g: a._accum(g * special.expit(-a.values)))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    v = np.logaddexp(0.0, a.values)
    return _make(v, (a,), lambda g: a._accum(g * special.expit(a.values)))


def selu(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    pos = x > 0
    ex = np.exp(np.minimum(x, 0.0))
    v = SELU_LAMBDA * np.where(pos, x, SELU_ALPHA * (ex - 1.0))
    dv = SELU_LAMBDA * np.where(pos, 1.0, SELU_ALPHA * ex)
    return _make(v, (a,), lambda g: a._accum(g * dv))


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo); gradient is zero where the floor is active."""
    a = as_tensor(a)
    keep = a.values > lo
    return _make(np.where(keep, a.values, lo), (a,), lambda g: a._accum(g * keep))


# shape and reductions -------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    v = a.values.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(np.asarray(v), (a,), bw)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return reduce_sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def logsumexp(a, axis=None, keepdims=False) -> Tensor:
    """Max-shifted log-sum-exp."""
    a = as_tensor(a)
    v = special.logsumexp(a.values, axis=axis, keepdims=True)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(g * np.exp(a.values - v))

    out = v if keepdims else (np.squeeze(v, axis=axis) if axis is not None else v.reshape(()))
    return _make(np.asarray(out), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.values.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.values.T, (a,), lambda g: a._accum(g.T))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        a._accum(full)

    return _make(a.values[idx], (a,), bw)


# stochastic and normalisation primitives -------------------------------------

def gaussian_sample(mu, sigma, eps) -> Tensor:
    """Reparameterised draw ``mu + sigma * eps``; ``eps`` is held constant."""
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    eps = np.asarray(eps, dtype=np.float64)

    def bw(g):
        if mu.requires_grad:
            mu._accum(_unbroadcast(g, mu.shape))
        if sigma.requires_grad:
            sigma._accum(_unbroadcast(g * eps, sigma.shape))

    return _make(mu.values + sigma.values * eps, (mu, sigma), bw)


def batch_norm(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Batch normalisation over axis 0 of a (batch, features) input.

    In train mode the batch statistics are used and, if ``update_stats``,
    the running buffers are updated in place (unbiased variance).  Eval
    mode uses the running buffers only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2:
        raise ValueError(f"batch_norm expects (batch, features), got {x.shape}")
    n = x.shape[0]
    if train:
        if n < 2:
            raise ValueError("batch_norm in train mode needs a batch of at least 2")
        mu = x.values.mean(axis=0)
        var = x.values.var(axis=0)
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv_std

    def bw(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.values
            if train:
                dx = inv_std / n * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                dx = dxhat * inv_std
            x._accum(dx)

    return _make(xhat * gamma.values + beta.values, (x, gamma, beta), bw)


# reverse pass ---------------------------------------------------------------

def build_tape(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    The graph is freed afterwards; calling again on the same loss raises.
    """
    if loss._freed:
        raise RuntimeError("backward called twice on the same graph; rebuild the forward pass")
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any parameter")
    tape = build_tape(loss)
    for node in tape:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.values)
    for node in reversed(tape):
        if node._backward is not None and node.grad is not None:
            node._backward()
    for node in tape:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._freed = True


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
