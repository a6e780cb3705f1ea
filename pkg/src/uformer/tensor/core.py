"""Dense tensors with reverse-mode differentiation.

Every op allocates a fresh output array (no views are shared between a
tensor and its inputs) and records an :class:`OpNode` whose ``grad_fn``
maps the output gradient to one gradient per input.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the dtype used when wrapping raw arrays."""
    global _DEFAULT_DTYPE
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


def get_default_dtype():
    return _DEFAULT_DTYPE


@dataclass(eq=False)
class OpNode:
    op_kind: str
    inputs: tuple["Tensor", ...]
    grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    saved: dict = field(default_factory=dict)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "graph_node", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype or _DEFAULT_DTYPE))
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.graph_node: OpNode | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

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
            return div(self, other)
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def _raise_item(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap a non-tensor operand in the dtype of the tensor one, so scalars do
    not lose precision against 64-bit data."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _make(data: np.ndarray, kind: str, inputs: Sequence[Tensor], grad_fn, **saved) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.graph_node = OpNode(kind, tuple(inputs), grad_fn, saved) if out.requires_grad else None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, kind: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- graph traversal ---------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.graph_node is not None:
            for parent in t.graph_node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(_topo_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t.graph_node
        if node is None:
            t.grad = g.astype(t.data.dtype, copy=True) if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(node.inputs, node.grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# -- elementwise ---------------------------------------------------------------

def elementwise(a, b, kind: str) -> Tensor:
    """Broadcasting ``add``, ``sub`` or ``mul``."""
    a, b = _pair(a, b)
    _broadcast_shape(a, b, kind)
    x, y = a.data, b.data
    if kind == "add":
        out = x + y

        def grad_fn(g):
            return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)
    elif kind == "sub":
        out = x - y

        def grad_fn(g):
            return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)
    elif kind == "mul":
        out = x * y

        def grad_fn(g):
            return (_unbroadcast(g * y, x.shape) if a.requires_grad else None,
                    _unbroadcast(g * x, y.shape) if b.requires_grad else None)
    else:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return _make(out, kind, (a, b), grad_fn)


def add(a, b) -> Tensor:
    return elementwise(a, b, "add")


def sub(a, b) -> Tensor:
    return elementwise(a, b, "sub")


def mul(a, b) -> Tensor:
    return elementwise(a, b, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    x, y = a.data, b.data
    out = x / y

    def grad_fn(g):
        return (_unbroadcast(g / y, x.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / y, y.shape) if b.requires_grad else None)
    return _make(out, "div", (a, b), grad_fn)


def absolute(a: Tensor) -> Tensor:
    x = a.data
    sign = np.sign(x)
    return _make(np.abs(x), "abs", (a,), lambda g: (g * sign,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _make(x * x, "square", (a,), lambda g: (2.0 * g * x,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, "sqrt", (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from None
    x, y = a.data, b.data
    out = np.matmul(x, y)

    def grad_fn(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(y, -1, -2)), x.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(x, -1, -2), g), y.shape) if b.requires_grad else None
        return ga, gb
    return _make(out, "matmul", (a, b), grad_fn)


# -- shape manipulation --------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape).copy()
    except ValueError:
        raise ShapeError(f"cannot reshape {src} into {tuple(shape)}") from None
    return _make(out, "reshape", (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _make(out, "transpose", (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a: Tensor, index) -> Tensor:
    src_shape, dtype = a.shape, a.data.dtype
    out = np.array(a.data[index], copy=True)

    def grad_fn(g):
        full = np.zeros(src_shape, dtype=g.dtype if g.dtype.itemsize >= dtype.itemsize else dtype)
        np.add.at(full, index, g) if _is_advanced(index) else full.__setitem__(index, g)
        return (full,)
    return _make(out, "getitem", (a,), grad_fn)


def _is_advanced(index) -> bool:
    idx = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                n != m for k, (n, m) in enumerate(zip(t.shape, ref)) if k != ax):
            raise ShapeError(f"concat along axis {axis}: shapes {ref} and {t.shape} differ")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def grad_fn(g):
        sl = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[ax] = slice(lo, hi)
            parts.append(np.ascontiguousarray(g[tuple(sl)]))
        return parts
    return _make(out, "concat", tensors, grad_fn)


def take_along_last(a: Tensor, index: np.ndarray) -> Tensor:
    """``out[..., i, j] = a[..., i, index[i, j]]`` with a fixed integer index."""
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 2 or index.shape[0] != a.shape[-2]:
        raise ShapeError(f"index {index.shape} does not fit rows of {a.shape}")
    lead = a.shape[:-2]
    idx = np.broadcast_to(index, lead + index.shape)
    out = np.take_along_axis(a.data, idx, axis=-1)
    src_shape = a.shape
    rows, cols = a.shape[-2], a.shape[-1]
    flat = (np.arange(rows)[:, None] * cols + index).reshape(-1)

    def grad_fn(g):
        g2 = g.reshape(-1, flat.size)
        batch = g2.shape[0]
        # duplicates in the index accumulate
        pos = (np.arange(batch)[:, None] * (rows * cols) + flat).reshape(-1)
        full = np.bincount(pos, weights=g2.reshape(-1), minlength=batch * rows * cols)
        return (full.astype(g.dtype, copy=False).reshape(src_shape),)
    return _make(out, "take_along_last", (a,), grad_fn)


# -- reductions ------------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)
    return _make(out, "sum", (a,), grad_fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        n = int(np.prod([a.shape[k] for k in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


# -- activations -------------------------------------------------------------------

def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky slope must lie in (0, 1), got {slope}")
    x = a.data
    # x == 0 maps to 0 either way; its subgradient is taken on the slope side
    scale = np.where(x > 0, 1.0, slope).astype(x.dtype)
    return _make(x * scale, "leaky_relu", (a,), lambda g: (g * scale,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for shape {x.shape}")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, "softmax", (a,), grad_fn)


def parameters_of(tensors) -> list[Tensor]:
    return [t for t in tensors if isinstance(t, Tensor) and t.requires_grad]
