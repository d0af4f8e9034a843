"""Dense tensor with a reverse-mode gradient trace.

A ``Tensor`` wraps a numpy array. Operations in :mod:`cct.numerics.ops`
record, for every output, the parent tensors and a closure mapping the
output gradient to parent gradients. :func:`backward` walks that trace in
reverse topological order.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import NumericError, UsageError

DTYPES = {"fp64": np.float64, "fp32": np.float32}
DEFAULT_DTYPE = np.float64


def resolve_dtype(dtype) -> np.dtype:
    if dtype is None:
        return np.dtype(DEFAULT_DTYPE)
    if isinstance(dtype, str) and dtype in DTYPES:
        return np.dtype(DTYPES[dtype])
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise UsageError(f"unsupported tensor dtype {dt}; use fp64 or fp32")
    return dt


_NAN_CHECK = os.environ.get("CCT_NAN_CHECK", "") not in ("", "0")


def nan_check_enabled() -> bool:
    return _NAN_CHECK


def set_nan_check(enabled: bool) -> None:
    """Toggle NaN/Inf assertions after every op (initialised from CCT_NAN_CHECK)."""
    global _NAN_CHECK
    _NAN_CHECK = bool(enabled)


def _consumed(_grad):
    raise UsageError("computation trace was already consumed by backward(); "
                     "pass retain_graph=True to backpropagate twice")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None or arr.dtype.kind != "f" or arr.dtype.itemsize < 4:
            arr = arr.astype(resolve_dtype(dtype), copy=False)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _make(cls, data, parents, backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                break
        else:
            out.requires_grad = False
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        if _NAN_CHECK and not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite value produced by {op} "
                               f"(shape {tuple(np.shape(data))})")
        return out

    # -- inspection -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data, requires_grad=self.requires_grad, dtype=dtype)

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    def __len__(self):
        return len(self.data)


def _not_scalar(t: Tensor):
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    """Wrap constants as non-differentiable tensors, matching ``like``'s dtype."""
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x, dtype=dtype)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Populate ``.grad`` on every leaf tensor that requires gradients.

    Leaf gradients accumulate across calls; zero them between steps.
    The trace is released afterwards unless ``retain_graph`` is set.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("backward() called on a tensor that does not require grad")

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg

    if not retain_graph:
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = _consumed
