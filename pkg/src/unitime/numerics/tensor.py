"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays (float64 by default). Every differentiable op
creates an output tensor that remembers its parents and a closure that pushes
the output gradient back into them. Output tensors receive a monotonically
increasing sequence number at creation, so sorting the reachable graph by that
number is a valid topological order: this creation order is the tape.

There is no implicit broadcasting. Elementwise ops require identical shapes
(or a Python/0-d scalar on one side); use :func:`broadcast_to` to align
explicitly. ``matmul`` follows matrix semantics: a right operand of rank 2 is
applied to the last axis of the left operand, otherwise leading dimensions
must match exactly.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64
LAYER_NORM_EPS = 1e-5

_sequence = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation / inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._seq = next(_sequence)

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
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
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    # -- operator sugar -----------------------------------------------------
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
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_sequence)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 and b.ndim > 0:
        return add(b, a)
    if b.ndim == 0:
        def _bw(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(np.asarray(g.sum()))
        return _make(a.data + b.data, (a, b), _bw)
    _check_same_shape("add", a, b)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)
    return _make(a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    return add(a, mul(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 and b.ndim > 0:
        return mul(b, a)
    if b.ndim == 0:
        def _bw(g):
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(np.asarray((g * a.data).sum()))
        return _make(a.data * b.data, (a, b), _bw)
    _check_same_shape("mul", a, b)

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)
    return _make(a.data * b.data, (a, b), _bw)


def square(x: Tensor) -> Tensor:
    def _bw(g):
        x._accumulate(2.0 * g * x.data)
    return _make(x.data * x.data, (x,), _bw)


def absolute(x: Tensor) -> Tensor:
    def _bw(g):
        x._accumulate(g * np.sign(x.data))
    return _make(np.abs(x.data), (x,), _bw)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def _bw(g):
        x._accumulate(g * out * (1.0 - out))
    return _make(out, (x,), _bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU (the GPT-2 variant)."""
    d = x.data
    d2 = d * d
    inner = _GELU_C * d * (1.0 + 0.044715 * d2)
    t = np.tanh(inner)
    out = 0.5 * d * (1.0 + t)

    def _bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * d2)
        local = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * dinner
        x._accumulate(g * local)
    return _make(out, (x,), _bw)


def masked_fill(x: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with ``value``; no gradient flows there."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    if m.shape != x.shape:
        raise ShapeError(f"masked_fill: shape mismatch {x.shape} vs mask {m.shape}")
    out = np.where(m, value, x.data)

    def _bw(g):
        x._accumulate(np.where(m, 0.0, g))
    return _make(out, (x,), _bw)


# -- reductions / normalisation -----------------------------------------------

def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def sum_(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        def _bw(g):
            x._accumulate(np.broadcast_to(g, x.shape))
        return _make(np.asarray(x.data.sum()), (x,), _bw)
    ax = _norm_axis(axis, x.ndim)

    def _bw(g):
        x._accumulate(np.broadcast_to(np.expand_dims(g, ax), x.shape))
    return _make(x.data.sum(axis=ax), (x,), _bw)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = x.size
        if n == 0:
            raise ShapeError("mean over an empty tensor")
        return mul(sum_(x), 1.0 / n)
    ax = _norm_axis(axis, x.ndim)
    if x.shape[ax] == 0:
        raise ShapeError(f"mean over axis {axis} of extent 0 in shape {x.shape}")
    return mul(sum_(x, ax), 1.0 / x.shape[ax])


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)
    if x.shape[ax] == 0:
        raise ShapeError(f"softmax over axis {axis} of extent 0 in shape {x.shape}")
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def _bw(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        x._accumulate(out * (g - dot))
    return _make(out, (x,), _bw)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, axis: int = -1,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise along ``axis`` then apply a learnable per-feature scale and shift.

    ``scale`` and ``shift`` have shape ``(x.shape[axis],)``.
    """
    ax = _norm_axis(axis, x.ndim)
    n = x.shape[ax]
    if scale.shape != (n,) or shift.shape != (n,):
        raise ShapeError(
            f"layer_norm: scale/shift shapes {scale.shape}/{shift.shape} do not match axis extent {n} of {x.shape}"
        )
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    bshape = [1] * x.ndim
    bshape[ax] = n
    s = scale.data.reshape(bshape)
    out = xhat * s + shift.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != ax)

    def _bw(g):
        if scale.requires_grad:
            scale._accumulate((g * xhat).sum(axis=red))
        if shift.requires_grad:
            shift._accumulate(g.sum(axis=red))
        if x.requires_grad:
            gx = g * s
            m1 = gx.mean(axis=ax, keepdims=True)
            m2 = (gx * xhat).mean(axis=ax, keepdims=True)
            x._accumulate(inv * (gx - m1 - xhat * m2))
    return _make(out, (x, scale, shift), _bw)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} vs {b.shape}")
    if b.ndim == 2:
        out = a.data @ b.data

        def _bw(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                k, n = b.shape
                b._accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, n))
        return _make(out, (a, b), _bw)
    if a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading dimensions differ {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ g)
    return _make(out, (a, b), _bw)


# -- shape manipulation -------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from exc

    def _bw(g):
        x._accumulate(g.reshape(x.shape))
    return _make(out, (x,), _bw)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: invalid axes {axes} for shape {x.shape}")
    inverse = np.argsort([a % x.ndim for a in axes])

    def _bw(g):
        x._accumulate(np.transpose(g, inverse))
    return _make(np.transpose(x.data, axes), (x,), _bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ax = _norm_axis(axis, tensors[0].ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat along axis {axis}: shape mismatch {ref} vs {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])
    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, _bw)


def slice_(x: Tensor, index) -> Tensor:
    """Basic (view-style) indexing: ints and slices only."""
    if not isinstance(index, tuple):
        index = (index,)
    for i in index:
        if not isinstance(i, (slice, int, np.integer)) and i is not Ellipsis:
            raise TypeError(f"slice supports ints, slices and Ellipsis, got {type(i).__name__}")
    out = x.data[index]

    def _bw(g):
        full = np.zeros_like(x.data)
        full[index] += g
        x._accumulate(full)
    return _make(np.array(out), (x,), _bw)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast by prepending axes (numpy rules); the gradient sums back."""
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from exc
    lead = len(shape) - x.ndim
    kept = tuple(i for i, s in enumerate(x.shape) if s == 1 and shape[lead + i] != 1)

    def _bw(g):
        r = g.sum(axis=tuple(range(lead))) if lead else g
        if kept:
            r = r.sum(axis=kept, keepdims=True)
        x._accumulate(r)
    return _make(np.ascontiguousarray(out), (x,), _bw)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` [V, D] at integer ``ids``; gradient scatters back."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be rank 2, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding ids out of range for table of {table.shape[0]} rows")

    def _bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accumulate(full)
    return _make(table.data[ids], (table,), _bw)


# -- backward -----------------------------------------------------------------

def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    stack = [root]
    nodes = []
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; zero them between steps.
    Interior (op output) gradients are recomputed on every call.
    """
    if loss.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    nodes = sorted(_reachable(loss), key=lambda t: t._seq, reverse=True)
    for node in nodes:
        if node._backward is not None:
            node.grad = None
    loss._accumulate(np.ones((), dtype=loss.data.dtype))
    for node in nodes:
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
