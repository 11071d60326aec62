"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable op records its inputs and a closure mapping the output
gradient to input gradients. ``backward`` collects the nodes reachable from a
scalar loss into a :class:`Tape` ordered by creation (which is a topological
order) and replays it in reverse.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_seq = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent; names the offending dimension."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate ops without recording them on the tape."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_seq", "_retain")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = next(_seq)
        self._retain = False

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data if data.dtype == np.float64 else data.astype(np.float64)
        out.grad = None
        out.name = None
        out._seq = next(_seq)
        out._retain = False
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def retain_grad(self) -> "Tensor":
        """Keep the gradient of this intermediate node after ``backward``."""
        self._retain = True
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # -- method aliases ---------------------------------------------------------
    def sum(self, axes=None, keepdims=False):
        return reduce_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce_mean(self, axes, keepdims)

    def max(self, axes=None, keepdims=False):
        return reduce_max(self, axes, keepdims)

    def min(self, axes=None, keepdims=False):
        return reduce_min(self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *perm):
        if len(perm) == 1 and isinstance(perm[0], (tuple, list)):
            perm = tuple(perm[0])
        return transpose(self, perm or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- tape / backward -----------------------------------------------------------
class Tape:
    """Nodes reachable from an output, in creation order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [out]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda n: n._seq)
        return cls(nodes)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Sets ``.grad`` on every reachable leaf that requires grad (overwriting any
    previous value) and on intermediates marked with ``retain_grad``. Returns
    the leaf gradients keyed by tensor.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g
            result[node] = g
            continue
        if node._retain:
            node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return result


# -- helpers -------------------------------------------------------------------
def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead > 0:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(out))


def _expand(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...], keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


# -- elementwise ---------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise (broadcasting) product."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return Tensor._from_op(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


multiply_elementwise = mul


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return Tensor._from_op(
        out, (a, b), lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape))
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return Tensor._from_op(x**p, (a,), lambda g: (g * p * x ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return Tensor._from_op(np.log(x), (a,), lambda g: (g / x,))


def absolute(a) -> Tensor:
    """|x|; the subgradient at 0 is 0."""
    a = as_tensor(a)
    x = a.data
    return Tensor._from_op(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    a = as_tensor(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return Tensor._from_op(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return Tensor._from_op(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),))


def softmax(a, axes=-1) -> Tensor:
    """Softmax normalised jointly over ``axes`` (max-subtracted)."""
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    if not ax:
        raise ShapeError("softmax needs at least one axis")
    for i in ax:
        if a.shape[i] == 0:
            raise ShapeError(f"softmax over empty axis {i}")
    x = a.data
    e = np.exp(x - x.max(axis=ax, keepdims=True))
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return Tensor._from_op(out, (a,), bw)


# -- linear algebra ------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (both operands rank >= 2)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimension mismatch: {a.shape[-1]} vs {b.shape[-2]}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._from_op(ad @ bd, (a, b), bw)


# -- reductions ----------------------------------------------------------------
def reduce_sum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    shape = a.shape
    return Tensor._from_op(
        a.data.sum(axis=ax, keepdims=keepdims), (a,), lambda g: (_expand(g, shape, ax, keepdims).copy(),)
    )


def reduce_mean(a, axes=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    shape = a.shape
    n = int(np.prod([shape[i] for i in ax])) if ax else 1
    if n == 0:
        raise ShapeError("mean over an empty extent")
    return Tensor._from_op(
        a.data.mean(axis=ax, keepdims=keepdims), (a,), lambda g: (_expand(g, shape, ax, keepdims) / n,)
    )


def _argmax_mask(x: np.ndarray, ax: tuple[int, ...]) -> np.ndarray:
    """Boolean mask marking the first (row-major) maximum within each reduced slice."""
    keep = [i for i in range(x.ndim) if i not in ax]
    perm = keep + list(ax)
    xt = np.transpose(x, perm)
    lead = xt.shape[: len(keep)]
    flat = xt.reshape(lead + (-1,))
    if flat.shape[-1] == 0:
        raise ShapeError("max over an empty extent")
    idx = flat.argmax(axis=-1)
    mask = np.zeros(flat.shape, dtype=bool)
    np.put_along_axis(mask, idx[..., None], True, axis=-1)
    return np.transpose(mask.reshape(xt.shape), np.argsort(perm))


def reduce_max(a, axes=None, keepdims: bool = False) -> Tensor:
    """Max over ``axes``; the gradient goes to the first maximal element in row-major order."""
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    x = a.data
    mask = _argmax_mask(x, ax)
    shape = x.shape
    out = x.max(axis=ax, keepdims=keepdims)
    return Tensor._from_op(out, (a,), lambda g: (_expand(g, shape, ax, keepdims) * mask,))


def reduce_min(a, axes=None, keepdims: bool = False) -> Tensor:
    """Min over ``axes`` with first-occurrence tie breaking."""
    a = as_tensor(a)
    ax = _norm_axes(axes, a.ndim)
    x = a.data
    mask = _argmax_mask(-x, ax)
    shape = x.shape
    out = x.min(axis=ax, keepdims=keepdims)
    return Tensor._from_op(out, (a,), lambda g: (_expand(g, shape, ax, keepdims) * mask,))


# -- shape manipulation --------------------------------------------------------
def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, perm=None) -> Tensor:
    a = as_tensor(a)
    if perm is None:
        perm = tuple(reversed(range(a.ndim)))
    inv = np.argsort(perm)
    return Tensor._from_op(np.transpose(a.data, perm), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._from_op(np.array(a.data[idx]), (a,), bw)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    ax = axis % ts[0].ndim
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]
    try:
        data = np.concatenate([t.data for t in ts], axis=ax)
    except ValueError as exc:
        raise ShapeError(f"concat along axis {ax}: {exc}") from None
    return Tensor._from_op(data, ts, lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("stack of an empty list")
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"stack needs equal shapes, got {sorted(shapes)}")
    data = np.stack([t.data for t in ts], axis=axis)
    ax = axis % data.ndim
    return Tensor._from_op(
        data, ts, lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(ts)))
    )
