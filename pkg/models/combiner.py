"""Multimodal combiner (MMC) and its attentive, gated variant (AMMC).

The MMC is a transformer encoder without an embedding layer: every feature row is
normalised by its family's own layer norm, tagged with a feature-type embedding, and the
encoder output is mean-pooled into one joint vector. The AMMC runs N such combiners and
mixes their joint vectors with a softmax gate queried by the style encoding.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from autograd import ops
from autograd.tensor import Tensor
from exceptions import ConfigurationError, DimensionError, ShapeError, VocabIndexError
from layers import Embedding, LayerNorm, Linear, Module, TransformerEncoderParams, embedding_lookup
from models.config import FEATURE_ORDER, CombinerConfig
from models.encoders import FeatureBundle
from seeding import rng_for


@dataclass(frozen=True)
class GateRecord:
    """Gate weights of one forward pass; non-negative and summing to one."""

    weights: Tuple[float, ...]
    style_id: Optional[int] = None

    @property
    def n_combiners(self) -> int:
        return len(self.weights)


class FeatureAssembler(Module):
    """Per-family layer norms plus the feature-type embedding table."""

    def __init__(self, d_model: int, n_feature_types: int, rng: np.random.Generator, eps: float = 1e-5):
        super().__init__()
        if n_feature_types < len(FEATURE_ORDER):
            raise ConfigurationError(f"n_feature_types must be at least {len(FEATURE_ORDER)}")
        self.d_model = d_model
        self.norms: List[LayerNorm] = []
        for family in FEATURE_ORDER:
            norm = LayerNorm(d_model, eps)
            self.add_module(f"{family}_norm", norm)
            self.norms.append(norm)
        self.type_embeddings = Embedding(n_feature_types, d_model, rng)


def assemble_sequence(bundle: FeatureBundle, params: FeatureAssembler) -> Tensor:
    """Normalise each family, add its type embedding row-wise, concatenate in fixed order."""
    bundle.validate(params.d_model)
    rows = []
    for type_id, block in bundle.blocks():
        normed = params.norms[type_id](block)
        rows.append(ops.add(normed, embedding_lookup(params.type_embeddings.table, [type_id])))
    return ops.concat(rows, axis=0)


class MultimodalCombiner(Module):
    def __init__(self, cfg: CombinerConfig, rng: np.random.Generator):
        super().__init__()
        self.d_model = cfg.d_model
        self.encoder = TransformerEncoderParams(
            cfg.layers_per_combiner, cfg.n_heads, cfg.d_model, cfg.d_ff, rng, cfg.layer_norm_eps
        )


def mmc_forward(seq: Tensor, params: MultimodalCombiner) -> Tensor:
    """Encode the assembled sequence and mean-pool it into a 1 x d_model joint vector."""
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError("combiner input must be a non-empty L x d_model sequence", seq.shape)
    encoded = params.encoder(seq)
    return ops.reshape(ops.mean(encoded, axis=0), (1, params.d_model))


class AttentiveMultimodalCombiner(Module):
    """N independent combiners and a zero-initialised style-queried gate.

    With one combiner the gate is the constant [1.0] and no gating parameters exist, so
    the module is a plain MMC.
    """

    def __init__(self, cfg: CombinerConfig, seed: int):
        super().__init__()
        self.cfg = cfg
        self.d_model = cfg.d_model
        self.combiners: List[MultimodalCombiner] = []
        for i in range(cfg.n_combiners):
            combiner = MultimodalCombiner(cfg, rng_for(seed, "combiner", i))
            self.add_module(f"combiner{i}", combiner)
            self.combiners.append(combiner)
        self.gate = (
            Linear(cfg.d_model, cfg.n_combiners, rng_for(seed, "gate"), zero_init=True)
            if cfg.n_combiners > 1 else None
        )

    @property
    def n_combiners(self) -> int:
        return len(self.combiners)

    def gate_weights(self, style_vec: Tensor) -> Tensor:
        if style_vec.shape != (1, self.d_model):
            raise DimensionError("style query must be 1 x d_model", style_vec.shape, (1, self.d_model))
        if self.gate is None:
            return Tensor(np.ones((1, 1)))
        return ops.softmax(self.gate(style_vec), axis=-1)


def _record(gate: Tensor, style_id: Optional[int]) -> GateRecord:
    return GateRecord(weights=tuple(float(w) for w in gate.data.reshape(-1)), style_id=style_id)


def ammc_forward(
    seq: Tensor,
    style_vec: Tensor,
    params: AttentiveMultimodalCombiner,
    style_id: Optional[int] = None,
) -> Tuple[Tensor, GateRecord]:
    """Gate-weighted sum of every combiner's joint vector."""
    gate = params.gate_weights(style_vec)
    joints = [mmc_forward(seq, combiner) for combiner in params.combiners]
    return ops.weighted_sum(gate, joints), _record(gate, style_id)


def probe_single_combiner(
    seq: Tensor,
    style_vec: Tensor,
    params: AttentiveMultimodalCombiner,
    index: int,
) -> Tensor:
    """Joint vector of combiner ``index`` alone, bypassing the gate."""
    if not 0 <= index < params.n_combiners:
        raise VocabIndexError(index, params.n_combiners, what="combiner index")
    if style_vec.shape != (1, params.d_model):
        raise DimensionError("style query must be 1 x d_model", style_vec.shape, (1, params.d_model))
    return mmc_forward(seq, params.combiners[index])
