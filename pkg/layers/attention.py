from typing import Callable, Optional

import numpy as np

from autograd import ops
from autograd.tensor import Tensor
from exceptions import ConfigurationError, DimensionError
from layers.linear import Linear
from layers.module import Module

AttentionHook = Callable[[np.ndarray], None]


class MultiHeadSelfAttention(Module):
    """Q/K/V/output projections for scaled dot-product self-attention."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if n_heads < 1 or d_model % n_heads != 0:
            raise ConfigurationError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.output = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor, hook: Optional[AttentionHook] = None) -> Tensor:
        return multi_head_self_attention(x, self, hook=hook)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    length, d_model = x.shape
    return ops.transpose(ops.reshape(x, (length, n_heads, d_model // n_heads)), (1, 0, 2))


def multi_head_self_attention(
    x: Tensor,
    params: MultiHeadSelfAttention,
    hook: Optional[AttentionHook] = None,
) -> Tensor:
    """Self-attention over the rows of ``x`` (L x d_model).

    ``hook`` receives the (heads x L x L) attention weights of this call.
    """
    if x.ndim != 2 or x.shape[1] != params.d_model:
        raise DimensionError("attention input must be L x d_model", x.shape, (params.d_model,))
    if params.d_model % params.n_heads != 0:
        raise ConfigurationError(f"d_model={params.d_model} is not divisible by n_heads={params.n_heads}")
    length = x.shape[0]
    head_dim = params.d_model // params.n_heads

    q = _split_heads(params.query(x), params.n_heads)
    k = _split_heads(params.key(x), params.n_heads)
    v = _split_heads(params.value(x), params.n_heads)

    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(head_dim))
    weights = ops.softmax(scores, axis=-1)
    if hook is not None:
        hook(weights.numpy())

    context = ops.matmul(weights, v)
    merged = ops.reshape(ops.transpose(context, (1, 0, 2)), (length, params.d_model))
    return params.output(merged)
