from typing import Iterable, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import parse_config
from data.models import N_RESERVED_TOKENS, AnswerVocab, TaskDataset
from exceptions import ConfigurationError

FEATURE_ORDER: Tuple[str, ...] = ("context", "global", "regional", "style")


class CombinerConfig(BaseModel):
    """Shape of the (attentive) multimodal combiner.

    The transformer layer budget is ``n_combiners * layers_per_combiner``, which is what
    layer-matched plain-combiner controls are sized against.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_combiners: int = Field(default=1, ge=1, le=4)
    layers_per_combiner: int = Field(default=2, ge=0)
    n_heads: int = Field(default=2, ge=1)
    d_model: int = Field(default=32, ge=1)
    d_ff: Optional[int] = None
    n_feature_types: int = Field(default=len(FEATURE_ORDER), ge=1)
    layer_norm_eps: float = Field(default=1e-5, gt=0)

    @property
    def total_layers(self) -> int:
        return self.n_combiners * self.layers_per_combiner


class ModelConfig(BaseModel):
    """All dimensions and counts of a TransResNet model."""

    model_config = ConfigDict(extra="forbid")

    vocab_size: int = Field(default=200, gt=N_RESERVED_TOKENS)
    d_model: int = Field(default=32, ge=1)
    n_heads: int = Field(default=2, ge=1)
    d_ff: Optional[int] = None
    text_layers: int = Field(default=1, ge=0)
    max_context_len: int = Field(default=32, ge=1)
    max_candidate_len: int = Field(default=16, ge=1)
    style_vocab: int = Field(default=12, ge=1)
    n_combiners: int = Field(default=1, ge=1, le=4)
    layers_per_combiner: int = Field(default=2, ge=0)
    n_feature_types: int = Field(default=len(FEATURE_ORDER), ge=len(FEATURE_ORDER))
    feature_order: Tuple[str, ...] = FEATURE_ORDER
    d_img_global: int = Field(default=16, ge=0)
    d_img_regional: int = Field(default=16, ge=0)
    answers: Optional[AnswerVocab] = None
    pool_context: bool = False
    image_features: Literal["both", "global", "regional", "none"] = "both"
    layer_norm_eps: float = Field(default=1e-5, gt=0)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    init_seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if tuple(self.feature_order) != FEATURE_ORDER:
            raise ValueError(f"feature_order must be {FEATURE_ORDER}")
        return self

    @property
    def n_answers(self) -> int:
        return self.answers.size if self.answers is not None else 0

    def combiner(self) -> CombinerConfig:
        return CombinerConfig(
            n_combiners=self.n_combiners,
            layers_per_combiner=self.layers_per_combiner,
            n_heads=self.n_heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            n_feature_types=self.n_feature_types,
            layer_norm_eps=self.layer_norm_eps,
        )

    @classmethod
    def for_datasets(cls, datasets: Iterable[TaskDataset], **overrides) -> "ModelConfig":
        """Derive vocabulary, style, image and answer sizes from the task headers."""
        datasets = list(datasets)
        if not datasets:
            raise ConfigurationError("at least one dataset is needed to size the model")
        max_token, max_style = N_RESERVED_TOKENS, 0
        for dataset in datasets:
            max_style = max([max_style, *dataset.style_space])
            for split in (dataset.train, dataset.valid, dataset.test):
                for example in split:
                    max_token = max([max_token, *example.context_tokens, *(example.gold_text or [])])

        d_global = {d.d_img_global for d in datasets if d.d_img_global}
        d_regional = {d.d_img_regional for d in datasets if d.d_img_regional}
        if len(d_global) > 1 or len(d_regional) > 1:
            raise ConfigurationError(
                f"datasets disagree on image feature widths: global={sorted(d_global)} regional={sorted(d_regional)}"
            )
        answer_sets = {tuple(d.answers.answers) for d in datasets if d.answers is not None}
        if len(answer_sets) > 1:
            raise ConfigurationError("datasets declare different answer vocabularies")

        derived = dict(
            vocab_size=max_token + 1,
            style_vocab=max_style + 1,
            d_img_global=d_global.pop() if d_global else 0,
            d_img_regional=d_regional.pop() if d_regional else 0,
            answers=AnswerVocab(answers=list(answer_sets.pop())) if answer_sets else None,
        )
        derived.update(overrides)
        return parse_config(cls, derived)
