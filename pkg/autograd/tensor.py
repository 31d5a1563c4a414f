"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation creates a new ``Tensor`` that remembers its parents and
a closure mapping the output gradient to one gradient per parent. ``backward`` walks the
graph in reverse topological order. Only leaf tensors (parameters and inputs created
with ``requires_grad=True``) keep a ``grad``; repeated ``backward`` calls accumulate
into it until ``zero_grad`` resets it.
"""
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import ShapeError

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]
GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)


def is_grad_enabled() -> bool:
    """Whether new operations record themselves on the tape."""
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block (evaluation)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """An n-dimensional float64 array, optionally linked to the gradient tape."""

    __slots__ = ("_data", "requires_grad", "grad", "name", "_parents", "_grad_fn")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, *, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64, order="C", copy=True)
        if array.ndim == 0:
            array = array.reshape(1)
        if any(size < 1 for size in array.shape):
            raise ShapeError("tensor dimensions must be positive", array.shape)
        array.setflags(write=True)
        self._data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._grad_fn: Optional[GradFn] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], grad_fn: GradFn) -> "Tensor":
        out = cls.__new__(cls)
        out._data = np.ascontiguousarray(data, dtype=np.float64)
        if out._data.ndim == 0:
            out._data = out._data.reshape(1)
        out.grad = None
        out.name = None
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._grad_fn = grad_fn if track else None
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._data.shape:
            raise ShapeError("tensor shape is immutable", self._data.shape, value.shape)
        self._data = np.ascontiguousarray(value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def numpy(self) -> np.ndarray:
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError("item() needs a single-element tensor", self.shape)
        return float(self._data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self._data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += grad.reshape(self.shape)

    # Operator sugar; the implementations live in autograd.ops.
    def __add__(self, other):
        from autograd import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from autograd import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from autograd import ops
        return ops.sub(ops.as_tensor(other), self)

    def __mul__(self, other):
        from autograd import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from autograd import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from autograd import ops
        return ops.matmul(self, other)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from a scalar ``loss``."""
    if loss.size != 1:
        raise ShapeError("backward() needs a scalar loss", loss.shape)
    if not loss.requires_grad:
        return

    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.is_leaf:
            node._accumulate(grad)
            continue
        parent_grads = node._grad_fn(grad)
        for parent, parent_grad in zip(node._parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad


def _topological_order(root: Tensor) -> list:
    """Iterative post-order DFS; recursion would overflow on deep tapes."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order
