"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A computation is recorded as a dynamic tape of `Tensor` nodes.  Each primitive
builds an output node whose `_backward` returns the adjoint contribution for
every parent.  `backward(loss)` walks the tape once in reverse topological
order and returns the gradient of the scalar loss with respect to every node
it reached.

Default precision is float64 so that finite-difference gradient checks hold
to tight tolerances; float32 is available by constructing parameters with
``dtype=np.float32`` (constants adopt the dtype of the tensor they combine
with).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "ParameterSet",
    "backward",
    "matmul",
    "add",
    "sub",
    "mul",
    "sigmoid",
    "tanh",
    "concat",
    "slice_axis",
    "logsumexp",
    "sum_all",
    "gather_rows",
    "reshape",
]


class Tensor:
    """A node in the computation tape: an ndarray plus backward bookkeeping.

    Leaf tensors are either trainable parameters (``requires_grad=True``,
    usually created through a `ParameterSet`) or constants.  Interior nodes
    are produced by the primitive ops below and keep references to their
    parents so the tape can be replayed backwards.
    """

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], tuple] | None = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Build an interior node; collapses to a constant if no parent needs grad."""
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Adjoint of numpy broadcasting: sum `grad` back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def backward_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward_fn)


def _elementwise(a, b, op_name, fwd, dfda, dfdb) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    try:
        out = fwd(a.data, b.data)
    except ValueError:
        raise ValueError(f"{op_name}: incompatible shapes {a.data.shape} and {b.data.shape}") from None

    def backward_fn(g):
        ga = _unbroadcast(dfda(g), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(dfdb(g), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward_fn)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (covers bias addition)."""
    return _elementwise(a, b, "add", np.add, lambda g: g, lambda g: g)


def sub(a, b) -> Tensor:
    return _elementwise(a, b, "sub", np.subtract, lambda g: g, lambda g: -g)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    return _elementwise(a, b, "mul", np.multiply, lambda g: g * b.data, lambda g: g * a.data)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = expit(x.data)

    def backward_fn(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), backward_fn)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def backward_fn(g):
        return (g * (1.0 - out * out),)

    return _node(out, (x,), backward_fn)


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    """Concatenate tensors along `axis` (default: last)."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat: need at least one tensor")
    ndim = parts[0].data.ndim
    ax = axis % ndim
    out = np.concatenate([p.data for p in parts], axis=ax)
    widths = [p.data.shape[ax] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward_fn(g):
        index = [slice(None)] * ndim
        grads = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                index[ax] = slice(lo, hi)
                grads.append(g[tuple(index)])
            else:
                grads.append(None)
        return tuple(grads)

    return _node(out, parts, backward_fn)


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis; adjoint zero-pads."""
    x = _as_tensor(x)
    ndim = x.data.ndim
    ax = axis % ndim
    n = x.data.shape[ax]
    if not (0 <= start <= stop <= n):
        raise ValueError(f"slice_axis: [{start}, {stop}) out of range for axis {axis} of shape {x.data.shape}")
    index = [slice(None)] * ndim
    index[ax] = slice(start, stop)
    index = tuple(index)
    out = x.data[index]

    def backward_fn(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _node(out, (x,), backward_fn)


def logsumexp(x, axis: int) -> Tensor:
    """log(sum(exp(x))) reduced over `axis`, computed with max-shift stability."""
    x = _as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    out = np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x.data - m), axis=axis))

    def backward_fn(g):
        soft = np.exp(x.data - np.expand_dims(out, axis))
        return (np.expand_dims(g, axis) * soft,)

    return _node(out, (x,), backward_fn)


def sum_all(x) -> Tensor:
    """Sum of every element, producing a rank-0 scalar."""
    x = _as_tensor(x)
    out = x.data.sum()

    def backward_fn(g):
        return (np.broadcast_to(g, x.data.shape).copy() if np.ndim(g) == 0 else np.full(x.data.shape, g),)

    return _node(out, (x,), backward_fn)


def gather_rows(table, ids) -> Tensor:
    """Select rows `ids` from a rank-2 table; adjoint scatter-adds into the table.

    Duplicate ids accumulate their gradients, which is what embedding lookups
    need.
    """
    table = _as_tensor(table)
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"gather_rows: ids must be rank-1, got shape {idx.shape}")
    if table.data.ndim != 2:
        raise ValueError(f"gather_rows: table must be rank-2, got shape {table.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ValueError(
            f"gather_rows: id out of range [0, {table.data.shape[0]}): "
            f"min={idx.min()}, max={idx.max()}"
        )
    out = table.data[idx]

    def backward_fn(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(out, (table,), backward_fn)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def backward_fn(g):
        return (g.reshape(x.data.shape),)

    return _node(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS over grad-requiring parents."""
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Run reverse-mode differentiation from a scalar loss.

    Returns a map ``id(tensor) -> gradient array`` covering every
    grad-requiring tensor reachable from the loss.  Gradients accumulate in
    tape order, so identical graphs produce bitwise-identical results.
    """
    if not isinstance(loss, Tensor):
        raise ValueError("backward: loss must be a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if not loss.requires_grad:
        return grads
    for node in reversed(_topo_order(loss)):
        g = grads[id(node)]
        if node._backward is None:
            continue
        contributions = node._backward(g)
        for parent, contrib in zip(node._parents, contributions):
            if contrib is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    return grads


class ParameterSet:
    """Named registry of trainable leaf tensors.

    Keeps the mapping between stable parameter names (used by the optimizer
    and by model serialization) and the live `Tensor` leaves referenced by a
    forward computation.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def grad_table(self, loss: Tensor, include_unused: bool = True) -> dict[str, np.ndarray]:
        """Gradient of `loss` w.r.t. every registered parameter.

        Parameters not on the loss path get zero gradients when
        ``include_unused`` is true, and are omitted otherwise (the training
        loop uses the omitting form to update only the active subnetwork).
        """
        grads = backward(loss)
        table: dict[str, np.ndarray] = {}
        for name, t in self._params.items():
            g = grads.get(id(t))
            if g is not None:
                table[name] = g
            elif include_unused:
                table[name] = np.zeros_like(t.data)
        return table
