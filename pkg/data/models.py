import math
from enum import Enum
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from exceptions import DatasetValidationError

FORMAT_VERSION = 1

# Reserved token ids shared by every vocabulary.
PAD_ID = 0
UNK_ID = 1
SEP_ID = 2
N_RESERVED_TOKENS = 3

NO_STYLE_ID = 0


class HeadType(str, Enum):
    """Which output head a task trains and is evaluated with."""
    RANKING = "ranking"
    CLASSIFICATION = "classification"
    BOTH = "both"

    @property
    def uses_ranking(self) -> bool:
        return self in (HeadType.RANKING, HeadType.BOTH)

    @property
    def uses_classification(self) -> bool:
        return self in (HeadType.CLASSIFICATION, HeadType.BOTH)


class Split(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


class RawImageFeatures(BaseModel):
    """Precomputed image features: one global vector and R regional rows (R may be 0)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    global_vec: Optional[List[float]] = None
    regional: List[List[float]] = Field(default_factory=list)

    _global_array: Optional[np.ndarray] = PrivateAttr(default=None)
    _regional_array: Optional[np.ndarray] = PrivateAttr(default=None)

    @field_validator("global_vec")
    @classmethod
    def _finite_global(cls, value):
        if value is not None and not all(math.isfinite(x) for x in value):
            raise ValueError("global image features must be finite")
        return value

    @field_validator("regional")
    @classmethod
    def _finite_regional(cls, value):
        widths = {len(row) for row in value}
        if len(widths) > 1:
            raise ValueError(f"regional rows have differing widths {sorted(widths)}")
        if any(not math.isfinite(x) for row in value for x in row):
            raise ValueError("regional image features must be finite")
        return value

    @property
    def n_regions(self) -> int:
        return len(self.regional)

    def global_array(self) -> Optional[np.ndarray]:
        if self.global_vec is None or not self.global_vec:
            return None
        if self._global_array is None:
            self._global_array = np.asarray(self.global_vec, dtype=np.float64).reshape(1, -1)
        return self._global_array

    def regional_array(self) -> Optional[np.ndarray]:
        if not self.regional:
            return None
        if self._regional_array is None:
            self._regional_array = np.asarray(self.regional, dtype=np.float64)
        return self._regional_array


AnswerTarget = Union[int, List[float]]


class Example(BaseModel):
    """One task example; ranking examples carry ``gold_text``, classification ones ``answer_index``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    context_tokens: List[int]
    raw_image: Optional[RawImageFeatures] = None
    style_id: int = NO_STYLE_ID
    gold_text: Optional[List[int]] = None
    answer_index: Optional[AnswerTarget] = None

    @property
    def has_ranking_target(self) -> bool:
        return bool(self.gold_text)

    @property
    def has_classification_target(self) -> bool:
        return self.answer_index is not None

    def answer_target(self, n_answers: int) -> np.ndarray:
        """Answer target as a (soft) vector over ``n_answers`` classes."""
        if isinstance(self.answer_index, int):
            target = np.zeros(n_answers)
            target[self.answer_index] = 1.0
            return target
        return np.asarray(self.answer_index, dtype=np.float64)

    def hard_answer(self) -> Optional[int]:
        if self.answer_index is None:
            return None
        if isinstance(self.answer_index, int):
            return self.answer_index
        return int(np.argmax(self.answer_index))


class AnswerVocab(BaseModel):
    """Ordered answer strings; the index of an answer is stable across round trips."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    answers: List[str]

    @field_validator("answers")
    @classmethod
    def _unique(cls, value):
        if len(set(value)) != len(value):
            raise ValueError("answer vocabulary entries must be unique")
        if not value:
            raise ValueError("answer vocabulary must not be empty")
        return value

    @property
    def size(self) -> int:
        return len(self.answers)

    def index(self, answer: str) -> int:
        return self.answers.index(answer)


class DatasetHeader(BaseModel):
    """First line of a dataset file."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["header"] = "header"
    format_version: int = FORMAT_VERSION
    name: str
    head: HeadType
    d_img_global: int = Field(ge=0)
    d_img_regional: int = Field(ge=0)
    n_regions: int = Field(ge=0)
    style_space: List[int]
    eval_candidate_count: int = Field(ge=1)
    answers: Optional[AnswerVocab] = None


class TaskDataset(BaseModel):
    """A named task with its splits, head binding and evaluation candidate count."""

    model_config = ConfigDict(extra="forbid")

    name: str
    head: HeadType
    d_img_global: int = 0
    d_img_regional: int = 0
    n_regions: int = 0
    style_space: List[int] = Field(default_factory=lambda: [NO_STYLE_ID])
    eval_candidate_count: int = 1
    answers: Optional[AnswerVocab] = None
    train: List[Example] = Field(default_factory=list)
    valid: List[Example] = Field(default_factory=list)
    test: List[Example] = Field(default_factory=list)

    def split(self, split: Union[Split, str]) -> List[Example]:
        return getattr(self, Split(split).value)

    @property
    def header(self) -> DatasetHeader:
        return DatasetHeader(
            name=self.name,
            head=self.head,
            d_img_global=self.d_img_global,
            d_img_regional=self.d_img_regional,
            n_regions=self.n_regions,
            style_space=self.style_space,
            eval_candidate_count=self.eval_candidate_count,
            answers=self.answers,
        )

    def supports(self, head: HeadType, split: Union[Split, str] = Split.TRAIN) -> bool:
        """Whether every example of ``split`` carries the targets ``head`` needs."""
        examples = self.split(split)
        if head.uses_ranking and not all(e.has_ranking_target for e in examples):
            return False
        if head.uses_classification and (
            self.answers is None or not all(e.has_classification_target for e in examples)
        ):
            return False
        return True

    def validate_invariants(self) -> None:
        """Raise ``DatasetValidationError`` naming the first offending example."""
        seen: Dict[str, str] = {}
        styles = set(self.style_space)
        for split in Split:
            for example in self.split(split):
                if example.id in seen:
                    raise DatasetValidationError(
                        f"id appears in both {seen[example.id]} and {split.value}", example_id=example.id
                    )
                seen[example.id] = split.value
                self._validate_example(example, styles)

    def _validate_example(self, example: Example, styles: set) -> None:
        eid = example.id
        if not example.context_tokens:
            raise DatasetValidationError("empty context", example_id=eid)
        if example.style_id not in styles:
            raise DatasetValidationError(f"style {example.style_id} outside style space", example_id=eid)
        if self.head.uses_ranking and not example.has_ranking_target:
            raise DatasetValidationError(f"{self.head.value} example without gold_text", example_id=eid)
        if self.head.uses_classification and not example.has_classification_target:
            raise DatasetValidationError(f"{self.head.value} example without answer target", example_id=eid)
        if example.answer_index is not None:
            if self.answers is None:
                raise DatasetValidationError("answer target but no answer vocabulary", example_id=eid)
            n_answers = self.answers.size
            if isinstance(example.answer_index, int):
                if not 0 <= example.answer_index < n_answers:
                    raise DatasetValidationError(
                        f"answer index {example.answer_index} outside [0, {n_answers})", example_id=eid
                    )
            elif len(example.answer_index) != n_answers or not all(0.0 <= t <= 1.0 for t in example.answer_index):
                raise DatasetValidationError("soft answer target must have one value in [0,1] per answer",
                                             example_id=eid)
        image = example.raw_image
        if image is not None:
            if image.global_vec and len(image.global_vec) != self.d_img_global:
                raise DatasetValidationError(
                    f"global features have width {len(image.global_vec)}, header says {self.d_img_global}",
                    example_id=eid,
                )
            if image.regional:
                if image.n_regions != self.n_regions:
                    raise DatasetValidationError(
                        f"{image.n_regions} regions, header says {self.n_regions}", example_id=eid
                    )
                if len(image.regional[0]) != self.d_img_regional:
                    raise DatasetValidationError(
                        f"regional features have width {len(image.regional[0])}, header says {self.d_img_regional}",
                        example_id=eid,
                    )

    def distinct_golds(self, split: Union[Split, str]) -> List[tuple]:
        """Distinct gold texts of a split, in first-appearance order."""
        seen = {}
        for example in self.split(split):
            if example.gold_text:
                seen.setdefault(tuple(example.gold_text), None)
        return list(seen)
