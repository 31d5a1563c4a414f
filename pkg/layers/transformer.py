"""Position-free Transformer encoder stack (post-norm, GELU feed-forward)."""
from typing import List, Optional

import numpy as np
from loguru import logger

from autograd import ops
from autograd.tensor import Tensor
from exceptions import ConfigurationError, DimensionError
from layers.attention import AttentionHook, MultiHeadSelfAttention
from layers.linear import Linear
from layers.module import Module, parameter


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        if not eps > 0:
            raise ConfigurationError(f"layer norm eps must be positive, got {eps}")
        self.eps = eps
        self.gain = parameter(np.ones(dim))
        self.bias = parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class EncoderLayer(Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: np.random.Generator, eps: float = 1e-5):
        super().__init__()
        self.attention = MultiHeadSelfAttention(d_model, n_heads, rng)
        self.attention_norm = LayerNorm(d_model, eps)
        self.ff_in = Linear(d_model, d_ff, rng)
        self.ff_out = Linear(d_ff, d_model, rng)
        self.ff_norm = LayerNorm(d_model, eps)

    def __call__(self, x: Tensor, hook: Optional[AttentionHook] = None) -> Tensor:
        x = self.attention_norm(ops.add(x, self.attention(x, hook=hook)))
        return self.ff_norm(ops.add(x, self.ff_out(ops.gelu(self.ff_in(x)))))


class TransformerEncoderParams(Module):
    """Weights of an ``n_layers`` encoder; the parameter count depends only on the shape tuple."""

    def __init__(
        self,
        n_layers: int,
        n_heads: int,
        d_model: int,
        d_ff: Optional[int],
        rng: np.random.Generator,
        eps: float = 1e-5,
        dropout: float = 0.0,
    ):
        super().__init__()
        if n_layers < 0:
            raise ConfigurationError(f"n_layers must be non-negative, got {n_layers}")
        if n_heads < 1 or d_model % n_heads != 0:
            raise ConfigurationError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        if dropout:
            logger.warning(f"dropout={dropout} is recorded but not applied")
        self.dropout = dropout
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_model = d_model
        self.d_ff = d_ff or 4 * d_model
        self.layers: List[EncoderLayer] = []
        for i in range(n_layers):
            layer = EncoderLayer(d_model, n_heads, self.d_ff, rng, eps)
            self.add_module(f"layer{i}", layer)
            self.layers.append(layer)

    def __call__(self, x: Tensor, hook: Optional[AttentionHook] = None) -> Tensor:
        return transformer_encoder(x, self, hook=hook)


def transformer_encoder(
    x: Tensor,
    params: TransformerEncoderParams,
    hook: Optional[AttentionHook] = None,
) -> Tensor:
    """Run every layer over ``x`` (L x d_model); ``n_layers == 0`` is the identity."""
    if x.ndim != 2 or x.shape[1] != params.d_model:
        raise DimensionError("encoder input width must equal d_model", x.shape, (params.d_model,))
    for layer in params.layers:
        x = layer(x, hook=hook)
    return x


def encoder_parameter_count(n_layers: int, d_model: int, d_ff: Optional[int] = None) -> int:
    """Closed-form parameter count of ``TransformerEncoderParams``."""
    d_ff = d_ff or 4 * d_model
    attention = 4 * (d_model * d_model + d_model)
    norms = 2 * (2 * d_model)
    feed_forward = d_model * d_ff + d_ff + d_ff * d_model + d_model
    return n_layers * (attention + norms + feed_forward)
