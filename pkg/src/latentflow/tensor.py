"""Dense float64 tensors with a small reverse-mode autodiff tape.

Operations are recorded on the active :class:`Tape` (a context variable, so
independent tapes can live on independent threads). Recording order is a
topological order by construction, and :meth:`Tape.backward` walks it once in
reverse.

Only the broadcasting the transformer needs is supported: leading batch/head
axes in ``matmul`` and numpy-style broadcasting in elementwise ops, with
gradients summed back onto the operand shape.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "latentflow_tape", default=None
)


class Tensor:
    """Immutable float64 array that may participate in a gradient tape."""

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ContractError("tensor data must be finite")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents, backward) -> "Tensor":
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        data.setflags(write=False)
        out.data = data
        tape = _ACTIVE_TAPE.get()
        track = tape is not None and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        if track:
            tape._record(out)
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic ----------------------------------------------------
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
        return mul(self, 1.0 / _raw(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return swap_last(self)


class Tape:
    """Ordered record of taped operations; consumed by :meth:`backward`."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._token = None
        self.consumed = False

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def _record(self, node: Tensor) -> None:
        if self.consumed:
            raise ContractError("tape already consumed")
        self._nodes.append(node)

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Return d(loss)/d(leaf) for every tape-tracked leaf reachable from ``loss``."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise ContractError("tape already consumed")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if not loss.requires_grad:
            return {}
        if loss._backward is None:
            return {loss: grads[id(loss)]}
        for node in reversed(self._nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
                if parent._backward is None:
                    leaves[key] = parent
        self._nodes.clear()
        return {leaf: grads[k] for k, leaf in leaves.items()}


def backward(loss: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    """Run reverse mode on ``tape`` (default: the active tape)."""
    tape = tape if tape is not None else _ACTIVE_TAPE.get()
    if tape is None:
        raise ContractError("no active tape")
    return tape.backward(loss)


def _raw(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- primitives ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    sa, sb = a.shape, b.shape
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    sa, sb = a.shape, b.shape
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    ad, bd = a.data, b.data
    return Tensor._from_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    ad, bd = a.data, b.data

    def _bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    return Tensor._from_op(out, (a, b), _bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def hardmax_cols(x) -> Tensor:
    """Column-wise zero-temperature softmax over axis -2.

    Each column puts mass ``1/k`` on its ``k`` maximal entries. The result is
    never tape-tracked: the map is piecewise constant, so its a.e. derivative
    is zero.
    """
    d = _raw(x)
    mask = d == d.max(axis=-2, keepdims=True)
    return Tensor(mask / mask.sum(axis=-2, keepdims=True))


def swap_last(x) -> Tensor:
    x = as_tensor(x)
    return Tensor._from_op(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return Tensor._from_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(src),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    src = x.shape

    items = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)

    def _bw(g):
        full = np.zeros(src)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(x.data[idx], (x,), _bw)


def concat(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(out, parts, _bw)


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    src = x.shape

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._from_op(x.data.sum(axis=axis, keepdims=keepdims), (x,), _bw)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(tensor_sum(x, axis=axis), 1.0 / count)


def square(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    return Tensor._from_op(d * d, (x,), lambda g: (2.0 * d * g,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Elementwise clamp to [lo, hi]; gradient passes strictly inside."""
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return Tensor._from_op(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def clamp_norm(x, bound: float) -> Tensor:
    """Scale each row (last axis) down onto the ball of radius ``bound`` iff it lies outside."""
    x = as_tensor(x)
    d = x.data
    norm = np.sqrt((d * d).sum(axis=-1, keepdims=True))
    over = norm > bound
    safe = np.where(over, norm, 1.0)
    scale = np.where(over, bound / safe, 1.0)

    def _bw(g):
        # d/dx [B x/|x|] = B/|x| (I - x x^T/|x|^2)
        proj = (g * d).sum(axis=-1, keepdims=True) / (safe * safe)
        return (np.where(over, scale * (g - d * proj), g),)

    return Tensor._from_op(d * scale, (x,), _bw)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape))
