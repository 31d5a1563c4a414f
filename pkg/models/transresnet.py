"""Full retrieval/classification model: encoders -> assembler -> (A)MMC -> heads."""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autograd import no_grad, ops
from autograd.tensor import Tensor
from data.models import Example, HeadType
from exceptions import ConfigurationError, VocabIndexError
from layers import Module
from models.combiner import (
    AttentiveMultimodalCombiner,
    FeatureAssembler,
    GateRecord,
    ammc_forward,
    assemble_sequence,
    probe_single_combiner,
)
from models.config import ModelConfig
from models.encoders import (
    CandidateEncoder,
    ContextEncoder,
    FeatureBundle,
    ImageFeatureAdapter,
    StyleEncoder,
    adapt_image_features,
    encode_candidates,
    encode_context,
    encode_style,
)
from models.heads import (
    ClassificationHead,
    RankingBatch,
    classification_loss,
    classify,
    multi_head_loss,
    rank_candidates,
    ranking_loss,
)
from seeding import rng_for

ENCODER_GROUPS = ("context_encoder", "candidate_encoder", "style_encoder", "image_adapter")
COMBINER_GROUPS = ("assembler", "combiner")
HEAD_GROUPS = ("classifier",)


class TransResNetModel(Module):
    """Two text encoders, a style encoder and image adapters feeding an attentive combiner.

    Every component draws its initial weights from its own labeled seed, so changing
    one component's shape never changes another's initialisation.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d, seed = config.d_model, config.init_seed
        text_args = dict(d_ff=config.d_ff, eps=config.layer_norm_eps, dropout=config.dropout)
        self.context_encoder = ContextEncoder(
            config.vocab_size, d, config.n_heads, config.text_layers, config.max_context_len,
            rng_for(seed, "context_encoder"), **text_args,
        )
        self.candidate_encoder = CandidateEncoder(
            config.vocab_size, d, config.n_heads, config.text_layers, config.max_candidate_len,
            rng_for(seed, "candidate_encoder"), **text_args,
        )
        self.style_encoder = StyleEncoder(config.style_vocab, d, rng_for(seed, "style_encoder"))
        self.image_adapter = ImageFeatureAdapter(
            config.d_img_global, config.d_img_regional, d, rng_for(seed, "image_adapter")
        )
        self.assembler = FeatureAssembler(d, config.n_feature_types, rng_for(seed, "assembler"), config.layer_norm_eps)
        self.combiner = AttentiveMultimodalCombiner(config.combiner(), seed)
        self.classifier = (
            ClassificationHead(d, config.answers, rng_for(seed, "classifier"))
            if config.answers is not None else None
        )

    # Parameter groups

    def group_parameter_names(self, groups: Sequence[str]) -> List[str]:
        prefixes = tuple(f"{g}." for g in groups)
        return [name for name, _ in self.named_parameters() if name.startswith(prefixes)]

    def encoder_parameter_names(self) -> List[str]:
        """Text encoders, style encoder and image adapters: the groups freezing holds fixed."""
        return self.group_parameter_names(ENCODER_GROUPS)

    def parameter_groups(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for name, param in self.named_parameters():
            group = name.split(".", 1)[0]
            counts[group] = counts.get(group, 0) + param.size
        return counts

    # Capabilities

    @property
    def supports_ranking(self) -> bool:
        return True

    @property
    def supports_classification(self) -> bool:
        return self.classifier is not None

    @property
    def n_combiners(self) -> int:
        return self.combiner.n_combiners

    # Forward passes

    def feature_bundle(self, example: Example) -> FeatureBundle:
        cfg = self.config
        if not 0 <= example.style_id < self.style_encoder.style_vocab:
            raise VocabIndexError(example.style_id, self.style_encoder.style_vocab, what="style id")
        context = encode_context(example.context_tokens, self.context_encoder)
        if cfg.pool_context:
            context = ops.reshape(ops.mean(context, axis=0), (1, cfg.d_model))
        image_global, image_regional = adapt_image_features(example.raw_image, self.image_adapter)
        if cfg.image_features in ("regional", "none"):
            image_global = None
        if cfg.image_features in ("global", "none"):
            image_regional = None
        style = encode_style(example.style_id, self.style_encoder)
        return FeatureBundle(context, image_global, image_regional, style)

    def joint(self, example: Example, probe_index: Optional[int] = None) -> Tuple[Tensor, GateRecord]:
        """Joint context vector (1 x d_model) and the gate that produced it.

        With ``probe_index`` the gate is bypassed and that combiner's output is returned;
        the gate record still reports the weights the gate would have used.
        """
        bundle = self.feature_bundle(example)
        seq = assemble_sequence(bundle, self.assembler)
        if probe_index is None:
            return ammc_forward(seq, bundle.style, self.combiner, style_id=example.style_id)
        joint = probe_single_combiner(seq, bundle.style, self.combiner, probe_index)
        gate = self.combiner.gate_weights(bundle.style)
        return joint, GateRecord(tuple(float(w) for w in gate.data.reshape(-1)), example.style_id)

    def joints(self, examples: Sequence[Example], probe_index: Optional[int] = None) -> Tuple[Tensor, List[GateRecord]]:
        pairs = [self.joint(example, probe_index) for example in examples]
        return ops.concat([joint for joint, _ in pairs], axis=0), [gate for _, gate in pairs]

    def candidate_vectors(self, candidates: Sequence[Sequence[int]]) -> Tensor:
        return encode_candidates(candidates, self.candidate_encoder)

    def batch_loss(self, examples: Sequence[Example], head: HeadType, mix: float = 0.5) -> Tuple[Tensor, Dict[str, float]]:
        """Training loss of one task batch under its head binding."""
        joints, _ = self.joints(examples)
        ranking_part = classification_part = None
        if head.uses_ranking:
            golds = self.candidate_vectors([example.gold_text for example in examples])
            ranking_part = ranking_loss(RankingBatch(joints, golds))
        if head.uses_classification:
            if self.classifier is None:
                raise ConfigurationError("classification head requested but the model has no answer vocabulary")
            n_answers = self.classifier.answers.size
            targets = np.stack([example.answer_target(n_answers) for example in examples])
            classification_part = classification_loss(classify(joints, self.classifier), targets)
        loss = multi_head_loss(ranking_part, classification_part, mix)
        parts = {"loss": loss.item()}
        if ranking_part is not None:
            parts["ranking"] = ranking_part.item()
        if classification_part is not None:
            parts["classification"] = classification_part.item()
        return loss, parts

    # Scoring (no tape)

    def score_candidates(
        self,
        example: Example,
        candidates: Sequence[Sequence[int]],
        probe_index: Optional[int] = None,
        cache: Optional[Dict[tuple, np.ndarray]] = None,
    ) -> np.ndarray:
        with no_grad():
            joint, _ = self.joint(example, probe_index)
            if cache is None:
                cand_vecs = self.candidate_vectors(candidates)
            else:
                missing = [c for c in candidates if tuple(c) not in cache]
                if missing:
                    encoded = self.candidate_vectors(missing).data
                    for c, row in zip(missing, encoded):
                        cache[tuple(c)] = row
                cand_vecs = Tensor(np.stack([cache[tuple(c)] for c in candidates]))
            return rank_candidates(joint, cand_vecs)

    def answer_logits(self, example: Example, probe_index: Optional[int] = None) -> np.ndarray:
        if self.classifier is None:
            raise ConfigurationError("model has no classification head")
        with no_grad():
            joint, _ = self.joint(example, probe_index)
            return classify(joint, self.classifier).data.reshape(-1).copy()

    def gate_for(self, example: Example) -> GateRecord:
        with no_grad():
            return self.joint(example)[1]
