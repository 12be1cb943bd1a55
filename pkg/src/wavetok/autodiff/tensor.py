"""Dense floating-point tensor with reverse-mode differentiation.

A ``Tensor`` wraps a numpy array. Operations on tensors that require
gradients record their parents together with a closure that maps the
output gradient to parent gradients. ``Tensor.backward`` walks the graph
in reverse topological order and accumulates into ``.grad``.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

DTYPE = np.float64
PRECISIONS = {"float64": np.dtype(np.float64), "float32": np.dtype(np.float32)}
_active = [np.dtype(DTYPE)]
_recording = [True]


def compute_dtype() -> np.dtype:
    """Dtype new tensors are cast to; float64 unless inside :func:`precision`."""
    return _active[-1]


@contextmanager
def precision(name: str) -> Iterator[np.dtype]:
    """Build and run tensors in ``name`` ("float64" or "float32") within the block."""
    try:
        dtype = PRECISIONS[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(PRECISIONS)}") from None
    _active.append(dtype)
    try:
        yield dtype
    finally:
        _active.pop()


@contextmanager
def no_grad() -> Iterator[None]:
    """Skip graph construction inside the block (inference only)."""
    _recording.append(False)
    try:
        yield
    finally:
        _recording.pop()


class GraphCycleError(RuntimeError):
    pass


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=_active[-1])


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100.0

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        op: str = "leaf",
        name: str | None = None,
    ):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = backward
        self.op = op
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
    def T(self) -> "Tensor":
        return self.transpose()

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op != "leaf" else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction -------------------------------------------------
    @staticmethod
    def _make(data, parents: Iterable["Tensor"], backward, op: str) -> "Tensor":
        parents = tuple(parents)
        if _recording[-1] and any(p.requires_grad for p in parents):
            return Tensor(data, True, parents, backward, op)
        return Tensor(data, False, (), None, op)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        Without an explicit ``grad`` the tensor must be a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype).reshape(self.shape)}
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
                if pg.dtype != parent.data.dtype:
                    pg = pg.astype(parent.data.dtype)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar (implemented in functional) ---------------------------
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __rtruediv__(self, other):
        from . import functional as F
        return F.div(other, self)

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __pow__(self, exponent: float):
        from . import functional as F
        return F.power(self, exponent)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __rmatmul__(self, other):
        from . import functional as F
        return F.matmul(other, self)

    def __getitem__(self, index):
        from . import functional as F
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        from . import functional as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Iterative DFS post-order; raises on a back edge."""
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        key = id(node)
        if idx == 0:
            if state.get(key) == 2:
                continue
            state[key] = 1
        parents = node._parents
        if idx < len(parents):
            stack.append((node, idx + 1))
            parent = parents[idx]
            pstate = state.get(id(parent))
            if pstate == 1:
                raise GraphCycleError("cycle detected in computation graph")
            if pstate is None and parent.requires_grad:
                stack.append((parent, 0))
        else:
            state[key] = 2
            order.append(node)
    return order


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


__all__ = ["DTYPE", "PRECISIONS", "compute_dtype", "no_grad", "precision", "GraphCycleError", "Tensor", "as_tensor", "tensor", "_unbroadcast"]
