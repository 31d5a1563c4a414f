"""Synthetic task suite that mimics the structure of the image+text tasks at desk scale.

Every image is a draw of ``latent_factors`` categorical factors. Its global vector sums
one prototype per factor value; its regional rows hold one prototype per factor (plus
clutter rows). The three tasks read the latents differently:

* ``caption``  ranking: the gold text names every factor value.
* ``chat``     ranking, style-conditioned: the style picks the factor the reply names
               and contributes a style word.
* ``qa``       classification: a question token picks a factor; the answer is its value.
"""
import itertools
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from data.models import (
    N_RESERVED_TOKENS,
    SEP_ID,
    AnswerVocab,
    Example,
    HeadType,
    RawImageFeatures,
    Split,
    TaskDataset,
)
from exceptions import ConfigurationError
from seeding import rng_for

TASK_KINDS = ("caption", "chat", "qa")


class SyntheticSuiteConfig(BaseModel):
    """Generator settings; identical configs produce byte-identical suites."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    n_tasks: int = Field(default=3, ge=1, le=len(TASK_KINDS))
    train_size: int = Field(default=2000, ge=0)
    valid_size: int = Field(default=200, ge=1)
    test_size: int = Field(default=200, ge=1)
    task_sizes: Dict[str, List[int]] = Field(default_factory=dict)
    vocab_size: int = Field(default=200, ge=8)
    d_img: int = Field(default=16, ge=1)
    n_regions: int = Field(default=4, ge=0)
    n_styles: int = Field(default=8, ge=1)
    latent_factors: int = Field(default=2, ge=1)
    factor_values: int = Field(default=8, ge=2)
    feature_noise: float = Field(default=0.05, ge=0.0)
    ranking_candidates: int = Field(default=20, ge=1)
    history_turns: int = Field(default=2, ge=0)
    turn_length: int = Field(default=3, ge=1)

    @model_validator(mode="after")
    def _check_sizes(self):
        for name, sizes in self.task_sizes.items():
            if name not in TASK_KINDS:
                raise ValueError(f"unknown task {name!r} in task_sizes")
            if len(sizes) != 3 or min(sizes) < 0:
                raise ValueError(f"task_sizes[{name!r}] must be [train, valid, test] counts")
        return self

    @property
    def task_names(self) -> List[str]:
        return list(TASK_KINDS[: self.n_tasks])

    @property
    def n_answers(self) -> int:
        return self.latent_factors * self.factor_values

    def sizes_for(self, task: str) -> Dict[Split, int]:
        sizes = self.task_sizes.get(task, [self.train_size, self.valid_size, self.test_size])
        return dict(zip(Split, sizes))

    def task_style_id(self, task: str) -> int:
        """Reserved style id of a style-less task (1..T)."""
        return 1 + TASK_KINDS.index(task)

    def trait_style_id(self, trait: int) -> int:
        return 1 + len(TASK_KINDS) + trait

    @property
    def style_vocab(self) -> int:
        return 1 + len(TASK_KINDS) + self.n_styles


class SyntheticVocab:
    """Token id layout: reserved ids, task prompts, questions, factor words, style words, filler."""

    def __init__(self, cfg: SyntheticSuiteConfig):
        self.cfg = cfg
        cursor = N_RESERVED_TOKENS
        self.task_base = cursor
        cursor += len(TASK_KINDS)
        self.question_base = cursor
        cursor += cfg.latent_factors
        self.content_base = cursor
        cursor += cfg.latent_factors * cfg.factor_values
        self.style_base = cursor
        cursor += cfg.n_styles
        self.filler_base = cursor
        if cursor >= cfg.vocab_size:
            raise ConfigurationError(
                f"vocab_size={cfg.vocab_size} too small: {cursor + 1} ids needed for "
                f"{cfg.latent_factors}x{cfg.factor_values} factor words and {cfg.n_styles} styles"
            )
        self.n_filler = cfg.vocab_size - cursor

    def task_token(self, task: str) -> int:
        return self.task_base + TASK_KINDS.index(task)

    def question_token(self, factor: int) -> int:
        return self.question_base + factor

    def content_word(self, factor: int, value: int) -> int:
        return self.content_base + factor * self.cfg.factor_values + value

    def style_word(self, trait: int) -> int:
        return self.style_base + trait

    def filler(self, rng: np.random.Generator, n: int) -> List[int]:
        return [int(t) for t in self.filler_base + rng.integers(self.n_filler, size=n)]


class SyntheticWorld:
    """Feature prototypes shared by every task; also inverts features back to latents."""

    def __init__(self, cfg: SyntheticSuiteConfig):
        self.cfg = cfg
        rng = rng_for(cfg.seed, "world")
        shape = (cfg.latent_factors, cfg.factor_values, cfg.d_img)
        self.global_prototypes = rng.normal(0.0, 1.0, size=shape)
        self.regional_prototypes = rng.normal(0.0, 1.0, size=shape)
        self._assignments = list(itertools.product(range(cfg.factor_values), repeat=cfg.latent_factors))

    def sample_latents(self, rng: np.random.Generator) -> Tuple[int, ...]:
        return tuple(int(v) for v in rng.integers(self.cfg.factor_values, size=self.cfg.latent_factors))

    def expected_global(self, latents: Sequence[int]) -> np.ndarray:
        return np.sum([self.global_prototypes[k, v] for k, v in enumerate(latents)], axis=0)

    def render(self, latents: Sequence[int], rng: np.random.Generator) -> RawImageFeatures:
        cfg = self.cfg
        noise = cfg.feature_noise
        global_vec = self.expected_global(latents) + rng.normal(0.0, noise, size=cfg.d_img)
        regional = []
        for region in range(cfg.n_regions):
            if region < cfg.latent_factors:
                row = self.regional_prototypes[region, latents[region]] + rng.normal(0.0, noise, size=cfg.d_img)
            else:
                row = rng.normal(0.0, 1.0, size=cfg.d_img)
            regional.append(row)
        return RawImageFeatures(
            global_vec=[round(float(x), 6) for x in global_vec],
            regional=[[round(float(x), 6) for x in row] for row in regional],
        )

    def invert(self, image: RawImageFeatures) -> Tuple[int, ...]:
        """Brute force over every latent assignment; returns the most likely one."""
        global_vec = np.asarray(image.global_vec)
        regional = image.regional_array()
        best, best_distance = None, np.inf
        for latents in self._assignments:
            distance = float(np.sum((global_vec - self.expected_global(latents)) ** 2))
            for k in range(min(self.cfg.latent_factors, self.cfg.n_regions)):
                distance += float(np.sum((regional[k] - self.regional_prototypes[k, latents[k]]) ** 2))
            if distance < best_distance:
                best, best_distance = latents, distance
        return best


class SyntheticSuiteGenerator:
    """Builds the synthetic task suite from a ``SyntheticSuiteConfig``."""

    def __init__(self, cfg: SyntheticSuiteConfig):
        self.cfg = cfg
        self.vocab = SyntheticVocab(cfg)
        self.world = SyntheticWorld(cfg)
        if cfg.n_regions and cfg.n_regions < cfg.latent_factors:
            raise ConfigurationError(
                f"n_regions={cfg.n_regions} cannot hold {cfg.latent_factors} latent factors"
            )

    @property
    def answers(self) -> AnswerVocab:
        cfg = self.cfg
        return AnswerVocab(answers=[f"f{k}v{v}" for k in range(cfg.latent_factors) for v in range(cfg.factor_values)])

    def generate(self) -> List[TaskDataset]:
        datasets = [self._build_task(task) for task in self.cfg.task_names]
        for dataset in datasets:
            dataset.validate_invariants()
        logger.info(f"Generated synthetic suite {[d.name for d in datasets]} (seed={self.cfg.seed})")
        return datasets

    def _build_task(self, task: str) -> TaskDataset:
        cfg = self.cfg
        splits = {}
        for split, size in cfg.sizes_for(task).items():
            rng = rng_for(cfg.seed, "examples", task, split.value)
            splits[split.value] = [self._example(task, f"{task}-{split.value}-{i:05d}", rng) for i in range(size)]

        if task == "qa":
            head, count, answers = HeadType.CLASSIFICATION, cfg.n_answers, self.answers
            style_space = [cfg.task_style_id(task)]
        else:
            head, answers = HeadType.RANKING, None
            if task == "caption":
                distinct = cfg.factor_values ** cfg.latent_factors
                style_space = [cfg.task_style_id(task)]
            else:
                distinct = cfg.n_styles * cfg.factor_values
                style_space = [cfg.trait_style_id(s) for s in range(cfg.n_styles)]
            count = min(cfg.ranking_candidates, distinct)
            if count < cfg.ranking_candidates:
                logger.warning(f"{task}: only {distinct} distinct replies, evaluating over {count} candidates")

        return TaskDataset(
            name=task,
            head=head,
            d_img_global=cfg.d_img,
            d_img_regional=cfg.d_img if cfg.n_regions else 0,
            n_regions=cfg.n_regions,
            style_space=style_space,
            eval_candidate_count=count,
            answers=answers,
            **splits,
        )

    def _example(self, task: str, example_id: str, rng: np.random.Generator) -> Example:
        cfg, vocab = self.cfg, self.vocab
        latents = self.world.sample_latents(rng)
        image = self.world.render(latents, rng)
        if task == "caption":
            return Example(
                id=example_id,
                context_tokens=[vocab.task_token(task)],
                raw_image=image,
                style_id=cfg.task_style_id(task),
                gold_text=[vocab.content_word(k, v) for k, v in enumerate(latents)],
            )
        if task == "chat":
            trait = int(rng.integers(cfg.n_styles))
            factor = trait % cfg.latent_factors
            history: List[int] = []
            for turn in range(cfg.history_turns):
                if turn:
                    history.append(SEP_ID)
                history.extend(vocab.filler(rng, cfg.turn_length))
            return Example(
                id=example_id,
                context_tokens=history or [vocab.task_token(task)],
                raw_image=image,
                style_id=cfg.trait_style_id(trait),
                gold_text=[vocab.style_word(trait), vocab.content_word(factor, latents[factor])],
            )
        factor = int(rng.integers(cfg.latent_factors))
        return Example(
            id=example_id,
            context_tokens=[vocab.task_token(task), vocab.question_token(factor)],
            raw_image=image,
            style_id=cfg.task_style_id(task),
            gold_text=[vocab.content_word(factor, latents[factor])],
            answer_index=factor * cfg.factor_values + latents[factor],
        )

    # Generator-inversion oracles: what a perfect reader of the generating function predicts.

    def oracle_answer(self, example: Example, image: Optional[RawImageFeatures] = None) -> int:
        latents = self.world.invert(image or example.raw_image)
        factor = example.context_tokens[1] - self.vocab.question_base
        return factor * self.cfg.factor_values + latents[factor]

    def oracle_gold(self, task: str, example: Example) -> List[int]:
        latents = self.world.invert(example.raw_image)
        if task == "caption":
            return [self.vocab.content_word(k, v) for k, v in enumerate(latents)]
        if task == "chat":
            trait = example.style_id - self.cfg.trait_style_id(0)
            factor = trait % self.cfg.latent_factors
            return [self.vocab.style_word(trait), self.vocab.content_word(factor, latents[factor])]
        factor = example.context_tokens[1] - self.vocab.question_base
        return [self.vocab.content_word(factor, latents[factor])]


def generate_synthetic_suite(cfg: SyntheticSuiteConfig) -> List[TaskDataset]:
    return SyntheticSuiteGenerator(cfg).generate()
