"""Reverse-mode automatic differentiation over numpy arrays.

Supports exactly the operation set the training stack needs: matmul,
broadcasting elementwise arithmetic, sum/mean/max reductions, concatenation,
basic slicing, clipping, exp/log, and the relu/silu/softplus activations.
A graph is recorded only when some input requires gradients, so forward
passes over frozen parameters run as plain numpy with no tape overhead.
"""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

DEFAULT_DTYPE = np.float32


def _sigmoid(x):
    # numerically stable in both tails, single exp pass
    ex = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over axes that were created or broadcast from `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An ndarray plus an optional backward closure into its parents."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ----------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        if needs:
            return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
        return Tensor(data)

    def _accumulate(self, g: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            # copy: backward closures may hand the same buffer to two parents
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar; populates .grad on graph tensors."""
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar loss, got shape {self.data.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data + b.data

        def backward(g):
            a._accumulate(_reduce_to(g, a.data.shape))
            b._accumulate(_reduce_to(g, b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            a._accumulate(-g)

        return Tensor._make(-a.data, (a,), backward)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data * b.data

        def backward(g):
            a._accumulate(_reduce_to(g * b.data, a.data.shape))
            b._accumulate(_reduce_to(g * a.data, b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data / b.data

        def backward(g):
            a._accumulate(_reduce_to(g / b.data, a.data.shape))
            b._accumulate(_reduce_to(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        out_data = a.data ** exponent

        def backward(g):
            a._accumulate(g * exponent * a.data ** (exponent - 1))

        return Tensor._make(out_data, (a,), backward)

    # -- matmul --------------------------------------------------------------

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        out_data = a.data @ b.data

        def backward(g):
            a2 = a.data if a.data.ndim > 1 else a.data[None, :]
            b2 = b.data if b.data.ndim > 1 else b.data[:, None]
            if a.data.ndim == 1 and b.data.ndim == 1:
                g2 = g.reshape(1, 1)
            elif a.data.ndim == 1:
                g2 = np.expand_dims(g, -2)
            elif b.data.ndim == 1:
                g2 = np.expand_dims(g, -1)
            else:
                g2 = g
            ga = g2 @ np.swapaxes(b2, -1, -2)
            gb = np.swapaxes(a2, -1, -2) @ g2
            a._accumulate(_reduce_to(ga, a2.shape).reshape(a.data.shape))
            b._accumulate(_reduce_to(gb, b2.shape).reshape(b.data.shape))

        return Tensor._make(out_data, (a, b), backward)

    # -- reductions ------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

        return Tensor._make(out_data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def max(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.max(axis=axis, keepdims=keepdims)

        def backward(g):
            out = out_data
            if axis is not None and not keepdims:
                out = np.expand_dims(out_data, axis)
                g = np.expand_dims(g, axis)
            mask = a.data == out
            count = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
            # ties split the gradient evenly, keeping duplicates symmetric
            a._accumulate(mask * (g / count))

        return Tensor._make(out_data, (a,), backward)

    # -- shape ops ----------------------------------------------------------------

    def reshape(self, *shape):
        a = self
        out_data = a.data.reshape(*shape)

        def backward(g):
            a._accumulate(g.reshape(a.data.shape))

        return Tensor._make(out_data, (a,), backward)

    def __getitem__(self, idx):
        a = self
        out_data = a.data[idx]

        def backward(g):
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

        return Tensor._make(out_data, (a,), backward)

    # -- unary math ----------------------------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def backward(g):
            a._accumulate(g * out_data)

        return Tensor._make(out_data, (a,), backward)

    def log(self):
        a = self
        out_data = np.log(a.data)

        def backward(g):
            a._accumulate(g / a.data)

        return Tensor._make(out_data, (a,), backward)

    def clip(self, lo: float, hi: float):
        a = self
        out_data = np.clip(a.data, lo, hi)

        def backward(g):
            inside = (a.data > lo) & (a.data < hi)
            a._accumulate(g * inside)

        return Tensor._make(out_data, (a,), backward)

    def relu(self):
        a = self
        out_data = np.maximum(a.data, 0.0)

        def backward(g):
            a._accumulate(g * (a.data > 0))

        return Tensor._make(out_data, (a,), backward)

    def silu(self):
        a = self
        sig = _sigmoid(a.data)
        out_data = a.data * sig

        def backward(g):
            a._accumulate(g * (sig + a.data * sig * (1.0 - sig)))

        return Tensor._make(out_data, (a,), backward)

    def softplus(self):
        a = self
        out_data = np.logaddexp(0.0, a.data)

        def backward(g):
            a._accumulate(g * _sigmoid(a.data))

        return Tensor._make(out_data, (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor._make(out_data, tensors, backward)


def _topo_order(root: Tensor):
    """Parents-first ordering; raises if the graph contains a cycle."""
    order = []
    state = {id(root): 1}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        nxt = next(it, None)
        if nxt is None:
            state[id(node)] = 2
            order.append(node)
            stack.pop()
            continue
        s = state.get(id(nxt))
        if s == 1:
            raise ValueError("cycle detected in computation graph")
        if s is None:
            state[id(nxt)] = 1
            stack.append((nxt, iter(nxt._parents)))
    return order
