"""Differentiable operations over ``Tensor``.

Each op computes its forward value with numpy and registers a closure that maps the
output gradient to one gradient per input. Broadcasting is limited to what the
layers need: scalars and trailing-row vectors against matrices.
"""
import math
from typing import List, Optional, Sequence, Union

import numpy as np

from autograd.tensor import Tensor
from exceptions import ConfigurationError, DimensionError, DomainError, ShapeError

Operand = Union[Tensor, float, int, np.ndarray]

_GELU_C = math.sqrt(2.0 / math.pi)


def as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} invalid for a {ndim}-d tensor")
    return axis % ndim


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum out the axes that broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes do not broadcast", a.shape, b.shape) from None


# Elementwise arithmetic

def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return Tensor._from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return Tensor._from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return Tensor._from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return Tensor._from_op(x.data * factor, (x,), lambda g: (g * factor,))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def grad_fn(g):
        du = _GELU_C * (1.0 + 3.0 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return Tensor._from_op(out, (x,), grad_fn)


# Shape manipulation

def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(_normalize_axis(a, x.ndim) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose axes {axes} are not a permutation", x.shape)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size or any(s < 1 for s in shape):
        raise ShapeError(f"cannot reshape to {shape}", x.shape)
    original = x.shape
    return Tensor._from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    axis = _normalize_axis(axis, tensors[0].ndim)
    for t in tensors[1:]:
        same_rank = t.ndim == tensors[0].ndim
        if not same_rank or any(t.shape[d] != tensors[0].shape[d] for d in range(t.ndim) if d != axis):
            raise DimensionError("concat: shapes disagree off the concat axis", tensors[0].shape, t.shape)
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), grad_fn)


def take(x: Tensor, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Select entries along ``axis``; gradient scatters back additively."""
    axis = _normalize_axis(axis, x.ndim)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("take needs a non-empty 1-d index list")
    if idx.min() < 0 or idx.max() >= x.shape[axis]:
        raise DimensionError(f"take: index out of range for axis {axis}", x.shape)

    def grad_fn(g):
        out = np.zeros_like(x.data)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (out,)

    return Tensor._from_op(np.take(x.data, idx, axis=axis), (x,), grad_fn)


# Reductions

def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - mirrors numpy
    if axis is None:
        return Tensor._from_op(np.array([x.data.sum()]), (x,), lambda g: (np.full(x.shape, g.reshape(-1)[0]),))
    axis = _normalize_axis(axis, x.ndim)
    out = x.data.sum(axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)
    return Tensor._from_op(
        out, (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g.reshape(np.delete(x.shape, axis)), axis), x.shape).copy(),),
    )


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """Arithmetic mean; with an axis the result drops that axis."""
    if axis is None:
        n = x.size
        return Tensor._from_op(np.array([x.data.mean()]), (x,), lambda g: (np.full(x.shape, g.reshape(-1)[0] / n),))
    axis = _normalize_axis(axis, x.ndim)
    n = x.shape[axis]
    if n < 1:
        raise DomainError("mean over an empty axis")
    reduced_shape = tuple(s for d, s in enumerate(x.shape) if d != axis) or (1,)
    out = x.data.mean(axis=axis).reshape(reduced_shape)

    def grad_fn(g):
        g = g.reshape(tuple(s for d, s in enumerate(x.shape) if d != axis))
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)

    return Tensor._from_op(out, (x,), grad_fn)


# Linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``a`` may carry leading batch axes shared with ``b`` or a 2-d ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs at least 2-d operands", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError("matmul inner dimensions disagree", a.shape, b.shape)
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError("matmul batch dimensions disagree", a.shape, b.shape)

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        if b.ndim == 2 and gb.ndim > 2:
            gb = gb.reshape(-1, *b.shape).sum(axis=0)
        return ga, gb

    return Tensor._from_op(a.data @ b.data, (a, b), grad_fn)


# Normalisation and probabilities

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilised by max subtraction."""
    axis = _normalize_axis(axis, x.ndim)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gain and bias."""
    if not eps > 0:
        raise ConfigurationError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm gain/bias must match the last dimension", x.shape, gain.shape, bias.shape)

    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def grad_fn(g):
        dxhat = g * gain.data
        dx = inv_std / d * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(x.ndim - 1))
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor._from_op(out, (x, gain, bias), grad_fn)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: Tensor, targets: Union[Tensor, np.ndarray, Sequence[float]]) -> Tensor:
    """Mean binary cross entropy on logits, finite for any logit magnitude."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    t = t.reshape(logits.shape) if t.size == logits.size else t
    if t.shape != logits.shape:
        raise DimensionError("bce_with_logits: logits and targets differ", logits.shape, t.shape)
    if not np.all((t >= 0.0) & (t <= 1.0)):
        raise DomainError("bce_with_logits targets must lie in [0, 1]")
    z = logits.data
    n = z.size
    loss = float((_softplus(z) - z * t).mean())

    def grad_fn(g):
        return ((_sigmoid(z) - t) * (g.reshape(-1)[0] / n),)

    return Tensor._from_op(np.array([loss]), (logits,), grad_fn)


def weighted_sum(weights: Tensor, items: List[Tensor]) -> Tensor:
    """``sum_i weights[..., i] * items[i]`` accumulated in index order."""
    if weights.shape[-1] != len(items):
        raise DimensionError(f"weighted_sum: {len(items)} items for weights", weights.shape)
    total = None
    for i, item in enumerate(items):
        term = mul(take(weights, [i], axis=-1), item)
        total = term if total is None else add(total, term)
    return total
