"""Ranking and classification heads with their binary cross entropy losses."""
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from autograd import ops
from autograd.tensor import Tensor
from data.models import AnswerVocab
from exceptions import ConfigurationError, DimensionError, DomainError
from layers import Linear, Module

__all__ = [
    "AnswerVocab",
    "ClassificationHead",
    "RankingBatch",
    "argmax_lowest",
    "classification_loss",
    "classify",
    "multi_head_loss",
    "rank_candidates",
    "ranking_loss",
]


def argmax_lowest(scores: np.ndarray) -> int:
    """Index of the maximum; ties go to the lowest index."""
    return int(np.argmax(np.asarray(scores).reshape(-1)))


def rank_candidates(joint: Tensor, cand_vecs: Tensor) -> np.ndarray:
    """Dot-product score of every candidate against the joint vector."""
    if joint.shape[-1] != cand_vecs.shape[-1] or joint.shape[0] != 1:
        raise DimensionError("joint and candidate widths disagree", joint.shape, cand_vecs.shape)
    return (cand_vecs.data @ joint.data.reshape(-1)).copy()


@dataclass
class RankingBatch:
    joints: Tensor
    gold_candidate_vecs: Tensor


def ranking_loss(batch: RankingBatch) -> Tensor:
    """BCE over the in-batch score matrix: each row's own gold is the positive."""
    joints, golds = batch.joints, batch.gold_candidate_vecs
    if joints.shape != golds.shape:
        raise DimensionError("joints and gold vectors disagree", joints.shape, golds.shape)
    size = joints.shape[0]
    if size < 2:
        raise ConfigurationError(f"in-batch negatives need a batch of at least 2, got {size}")
    scores = ops.matmul(joints, ops.transpose(golds))
    return ops.bce_with_logits(scores, np.eye(size))


class ClassificationHead(Module):
    """Single linear layer over the joint vector, one logit per answer."""

    def __init__(self, d_model: int, answers: AnswerVocab, rng: np.random.Generator):
        super().__init__()
        self.answers = answers
        self.proj = Linear(d_model, answers.size, rng)


def classify(joint: Tensor, params: ClassificationHead) -> Tensor:
    """Answer logits (rows x A); predicted answer is ``argmax_lowest``."""
    return params.proj(joint)


def classification_loss(logits: Tensor, target: Union[np.ndarray, Sequence[float]]) -> Tensor:
    """Element-wise BCE on logits against a (multi-hot or soft) target in [0,1]^A."""
    target = np.asarray(target, dtype=np.float64)
    if target.size != logits.size:
        raise DimensionError("logits and answer targets differ in length", logits.shape, target.shape)
    if not np.all((target >= 0.0) & (target <= 1.0)):
        raise DomainError("answer targets must lie in [0, 1]")
    return ops.bce_with_logits(logits, target.reshape(logits.shape))


def multi_head_loss(
    ranking_part: Optional[Tensor],
    classification_part: Optional[Tensor],
    mix: float = 0.5,
) -> Tensor:
    """``mix * classification + (1 - mix) * ranking``; a lone part passes through."""
    if not 0.0 <= mix <= 1.0:
        raise ConfigurationError(f"mix must lie in [0, 1], got {mix}")
    if ranking_part is None and classification_part is None:
        raise ConfigurationError("multi_head_loss needs at least one loss part")
    if ranking_part is None:
        return classification_part
    if classification_part is None:
        return ranking_part
    return ops.add(ops.scale(classification_part, mix), ops.scale(ranking_part, 1.0 - mix))
