"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Small by design: exactly the operations the encoders, location heads, and
generator need, with broadcasting-aware backward passes. Graphs are built
eagerly; ``backward()`` on a scalar accumulates gradients into ``.grad`` of
every reachable tensor with ``requires_grad``. ``no_grad()`` disables graph
construction for inference.

Subgradient conventions (relevant at box-edge kinks): ``maximum``/``minimum``
route the gradient to the winning input (ties go to the first argument),
``abs`` uses sign with 0 at 0, ``clip`` passes gradient only strictly inside
the interval.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _accum_fit(t: "Tensor", grad: np.ndarray, own: bool) -> None:
    """Reduce grad to t's shape if broadcasting expanded it, then accumulate."""
    if grad.shape == t.data.shape:
        t._accum(grad, own=own)
    else:
        t._accum(_unbroadcast(grad, t.data.shape), own=True)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._bwd = None

    # -- graph plumbing ----------------------------------------------------

    @staticmethod
    def _result(data, parents, bwd):
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs)
        if needs:
            out._parents = tuple(parents)
            out._bwd = bwd
        return out

    def _accum(self, g, own: bool = False):
        """Add g into .grad; own=True means g is freshly allocated and may be
        adopted without a defensive copy."""
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g if own else np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accum(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._bwd is not None:
                node._bwd(node.grad)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- basics ------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def bwd(g):
            _accum_fit(self, g, own=False)
            _accum_fit(other, g, own=False)

        return Tensor._result(out_data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accum(-g, own=True)

        return Tensor._result(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def bwd(g):
            _accum_fit(self, g * other.data, own=True)
            _accum_fit(other, g * self.data, own=True)

        return Tensor._result(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def bwd(g):
            _accum_fit(self, g / other.data, own=True)
            _accum_fit(other, -g * self.data / (other.data * other.data), own=True)

        return Tensor._result(out_data, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only scalar exponents are supported")

        def bwd(g):
            self._accum(g * p * self.data ** (p - 1), own=True)

        return Tensor._result(self.data**p, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)
        out_data = self.data @ other.data

        def bwd(g):
            _accum_fit(self, g @ np.swapaxes(other.data, -1, -2), own=True)
            _accum_fit(other, np.swapaxes(self.data, -1, -2) @ g, own=True)

        return Tensor._result(out_data, (self, other), bwd)

    # -- elementwise ----------------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            self._accum(g * out_data, own=True)

        return Tensor._result(out_data, (self,), bwd)

    def log(self):
        def bwd(g):
            self._accum(g / self.data, own=True)

        return Tensor._result(np.log(self.data), (self,), bwd)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def bwd(g):
            self._accum(g * 0.5 / out_data, own=True)

        return Tensor._result(out_data, (self,), bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            self._accum(g * (1.0 - out_data * out_data), own=True)

        return Tensor._result(out_data, (self,), bwd)

    def sigmoid(self):
        x = self.data
        e = np.exp(-np.abs(x))
        out_data = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

        def bwd(g):
            self._accum(g * out_data * (1.0 - out_data), own=True)

        return Tensor._result(out_data, (self,), bwd)

    def abs(self):
        def bwd(g):
            self._accum(g * np.sign(self.data), own=True)

        return Tensor._result(np.abs(self.data), (self,), bwd)

    def clip(self, lo: float, hi: float):
        mask = (self.data > lo) & (self.data < hi)

        def bwd(g):
            self._accum(g * mask, own=True)

        return Tensor._result(np.clip(self.data, lo, hi), (self,), bwd)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accum(np.broadcast_to(gg, self.data.shape).copy(), own=True)

        return Tensor._result(out_data, (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape ----------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def bwd(g):
            self._accum(g.reshape(old), own=False)

        return Tensor._result(self.data.reshape(shape), (self,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def bwd(g):
            self._accum(g.transpose(inv), own=False)

        return Tensor._result(self.data.transpose(axes), (self,), bwd)

    def swapaxes(self, a: int, b: int):
        def bwd(g):
            self._accum(np.swapaxes(g, a, b), own=False)

        return Tensor._result(np.swapaxes(self.data, a, b), (self,), bwd)

    def __getitem__(self, key):
        out_data = self.data[key]

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accum(full, own=True)

        return Tensor._result(out_data, (self,), bwd)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def parameter(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data

    def bwd(g):
        _accum_fit(a, g * take_a, own=True)
        _accum_fit(b, g * (~take_a), own=True)

    return Tensor._result(np.maximum(a.data, b.data), (a, b), bwd)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data

    def bwd(g):
        _accum_fit(a, g * take_a, own=True)
        _accum_fit(b, g * (~take_a), own=True)

    return Tensor._result(np.minimum(a.data, b.data), (a, b), bwd)


def where(cond, a, b) -> Tensor:
    """Select by a constant boolean mask."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum_fit(a, g * cond, own=True)
        _accum_fit(b, g * (~cond), own=True)

    return Tensor._result(np.where(cond, a.data, b.data), (a, b), bwd)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(piece, own=False)

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bwd(g):
        for i, t in enumerate(tensors):
            t._accum(np.take(g, i, axis=axis), own=True)

    return Tensor._result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def take(table: Tensor, ids) -> Tensor:
    """Row gather (embedding lookup): out[...,:] = table[ids[...], :]."""
    ids = np.asarray(ids, dtype=np.int64)

    def bwd(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accum(full, own=True)

    return Tensor._result(table.data[ids], (table,), bwd)


def gather_last(x: Tensor, idx) -> Tensor:
    """Pick one entry along the last axis per leading position."""
    idx = np.asarray(idx, dtype=np.int64)
    out_data = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx[..., None], g[..., None], axis=-1)
        x._accum(full, own=True)

    return Tensor._result(out_data, (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = x - constant(x.data.max(axis=axis, keepdims=True))
    e = shift.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = x - constant(x.data.max(axis=axis, keepdims=True))
    return shift - shift.exp().sum(axis=axis, keepdims=True).log()


def gelu(x: Tensor) -> Tensor:
    # tanh approximation; smooth everywhere, which keeps finite differences honest
    c = np.sqrt(2.0 / np.pi)
    cube = x * x * x
    return 0.5 * x * (1.0 + (c * (x + 0.044715 * cube)).tanh())
