"""Context, candidate, style and image-feature encoders.

All four produce rows of width ``d_model`` that the combiner fuses.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from autograd import ops
from autograd.tensor import Tensor
from data.models import UNK_ID, RawImageFeatures
from exceptions import DimensionError, DomainError, ShapeError
from layers import Embedding, Linear, Module, TransformerEncoderParams, embedding_lookup
from models.config import FEATURE_ORDER


@dataclass
class FeatureBundle:
    """One example's encoded inputs, before type norms and type embeddings."""

    context_tokens: Optional[Tensor]
    image_global: Optional[Tensor]
    image_regional: Optional[Tensor]
    style: Optional[Tensor]

    def blocks(self) -> List[Tuple[int, Tensor]]:
        """Present blocks as (feature-type id, rows) in the fixed family order."""
        present = (self.context_tokens, self.image_global, self.image_regional, self.style)
        return [(type_id, block) for type_id, block in enumerate(present) if block is not None]

    @property
    def type_tags(self) -> List[int]:
        return [type_id for type_id, block in self.blocks() for _ in range(block.shape[0])]

    def validate(self, d_model: int) -> None:
        blocks = self.blocks()
        if not blocks:
            raise ShapeError("a feature bundle needs at least one block")
        for type_id, block in blocks:
            if block.ndim != 2 or block.shape[1] != d_model:
                raise DimensionError(f"{FEATURE_ORDER[type_id]} block must have width {d_model}", block.shape)


class TextEncoder(Module):
    """Token + learned absolute position embeddings followed by a transformer encoder."""

    keep_recent = False

    def __init__(self, vocab_size: int, d_model: int, n_heads: int, n_layers: int, max_len: int,
                 rng: np.random.Generator, d_ff: Optional[int] = None, eps: float = 1e-5, dropout: float = 0.0):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.d_model = d_model
        self.tokens = Embedding(vocab_size, d_model, rng)
        self.positions = Embedding(max_len, d_model, rng)
        self.encoder = TransformerEncoderParams(n_layers, n_heads, d_model, d_ff, rng, eps, dropout)

    def prepare_ids(self, token_ids: Sequence[int]) -> List[int]:
        """Map out-of-vocabulary ids to UNK and truncate to ``max_len``."""
        ids = [int(t) if 0 <= int(t) < self.vocab_size else UNK_ID for t in token_ids]
        if len(ids) > self.max_len:
            ids = ids[-self.max_len:] if self.keep_recent else ids[: self.max_len]
        return ids

    def encode_tokens(self, token_ids: Sequence[int]) -> Tensor:
        ids = self.prepare_ids(token_ids)
        x = ops.add(embedding_lookup(self.tokens.table, ids), embedding_lookup(self.positions.table, range(len(ids))))
        return self.encoder(x)


class ContextEncoder(TextEncoder):
    """Keeps per-token outputs; long dialogue histories keep their most recent tokens."""

    keep_recent = True


class CandidateEncoder(TextEncoder):
    """One vector per candidate: the mean of its per-token outputs."""


def encode_context(token_ids: Sequence[int], params: ContextEncoder) -> Tensor:
    """Per-token context encodings (L_ctx x d_model)."""
    if len(token_ids) == 0:
        raise DomainError("context must contain at least one token")
    return params.encode_tokens(token_ids)


def encode_candidates(candidates: Sequence[Sequence[int]], params: CandidateEncoder) -> Tensor:
    """Mean-pooled candidate encodings (C x d_model)."""
    if len(candidates) == 0:
        raise DomainError("candidate list is empty")
    rows = []
    for i, candidate in enumerate(candidates):
        if len(candidate) == 0:
            raise DomainError(f"candidate {i} is empty")
        rows.append(ops.reshape(ops.mean(params.encode_tokens(candidate), axis=0), (1, params.d_model)))
    return ops.concat(rows, axis=0)


class StyleEncoder(Module):
    """Style embedding table: id 0 is NO_STYLE, 1..T task tokens, then style traits."""

    def __init__(self, style_vocab: int, d_model: int, rng: np.random.Generator):
        super().__init__()
        self.styles = Embedding(style_vocab, d_model, rng)

    @property
    def style_vocab(self) -> int:
        return self.styles.num_embeddings


def encode_style(style_id: int, params: StyleEncoder) -> Tensor:
    return embedding_lookup(params.styles.table, [style_id])


class ImageFeatureAdapter(Module):
    """Independent projections of global and regional image features to ``d_model``."""

    def __init__(self, d_img_global: int, d_img_regional: int, d_model: int, rng: np.random.Generator):
        super().__init__()
        self.d_img_global = d_img_global
        self.d_img_regional = d_img_regional
        self.global_proj = Linear(d_img_global, d_model, rng) if d_img_global else None
        self.regional_proj = Linear(d_img_regional, d_model, rng) if d_img_regional else None


def adapt_image_features(
    raw: Optional[RawImageFeatures],
    params: ImageFeatureAdapter,
) -> Tuple[Optional[Tensor], Optional[Tensor]]:
    """Project each present image feature family; absent families stay absent."""
    if raw is None:
        return None, None
    image_global = image_regional = None
    global_array = raw.global_array()
    if global_array is not None:
        if params.global_proj is None or global_array.shape[1] != params.d_img_global:
            raise DimensionError("global image features do not match the adapter", global_array.shape,
                                 (params.d_img_global,))
        image_global = params.global_proj(Tensor(global_array))
    regional_array = raw.regional_array()
    if regional_array is not None:
        if params.regional_proj is None or regional_array.shape[1] != params.d_img_regional:
            raise DimensionError("regional image features do not match the adapter", regional_array.shape,
                                 (params.d_img_regional,))
        image_regional = params.regional_proj(Tensor(regional_array))
    return image_global, image_regional
