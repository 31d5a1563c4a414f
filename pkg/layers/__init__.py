from .module import Module, parameter, uniform_init
from .linear import Linear, linear
from .embedding import Embedding, embedding_lookup
from .attention import MultiHeadSelfAttention, multi_head_self_attention
from .transformer import (
    EncoderLayer,
    LayerNorm,
    TransformerEncoderParams,
    encoder_parameter_count,
    transformer_encoder,
)

__all__ = [
    'Module',
    'parameter',
    'uniform_init',
    'Linear',
    'linear',
    'Embedding',
    'embedding_lookup',
    'MultiHeadSelfAttention',
    'multi_head_self_attention',
    'EncoderLayer',
    'LayerNorm',
    'TransformerEncoderParams',
    'encoder_parameter_count',
    'transformer_encoder',
]
