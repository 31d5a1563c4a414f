from typing import Optional

import numpy as np

from autograd import ops
from autograd.tensor import Tensor
from exceptions import DimensionError
from layers.module import Module, parameter, uniform_init


def linear(x: Tensor, W: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (..., d_in)."""
    if x.shape[-1] != W.shape[0]:
        raise DimensionError("linear: input width does not match weight rows", x.shape, W.shape)
    if b is not None and b.shape != (W.shape[1],):
        raise DimensionError("linear: bias does not match weight columns", W.shape, b.shape)
    out = ops.matmul(x, W)
    return out if b is None else ops.add(out, b)


class Linear(Module):
    """Affine layer with uniform 1/sqrt(fan_in) weights and zero bias."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, *, bias: bool = True, zero_init: bool = False):
        super().__init__()
        self.d_in = d_in
        self.d_out = d_out
        weight = np.zeros((d_in, d_out)) if zero_init else uniform_init(rng, d_in, (d_in, d_out))
        self.weight = parameter(weight)
        self.bias = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)
