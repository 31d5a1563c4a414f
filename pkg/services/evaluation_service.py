"""Retrieval and classification metrics, transfer matrices and gate reports."""
import json
import os
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Protocol, Sequence, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from autograd import no_grad
from data.models import Example, HeadType, Split, TaskDataset
from data.sampling import CandidatePoolBuilder
from exceptions import CompatibilityError, ConfigurationError, TransResNetError
from models.heads import argmax_lowest


class Scorer(Protocol):
    """Anything that scores candidate lists and answer vocabularies for an example."""

    @property
    def supports_ranking(self) -> bool: ...

    @property
    def supports_classification(self) -> bool: ...

    def score_candidates(self, example: Example, candidates: Sequence[Sequence[int]],
                         probe_index: Optional[int] = None, cache: Optional[dict] = None) -> np.ndarray: ...

    def answer_logits(self, example: Example, probe_index: Optional[int] = None) -> np.ndarray: ...


def metric_head(head: HeadType) -> HeadType:
    """Head a task is scored with: tasks carrying a classification head report accuracy."""
    return HeadType.CLASSIFICATION if head.uses_classification else HeadType.RANKING


def metric_name(head: HeadType) -> str:
    return "accuracy" if metric_head(head) is HeadType.CLASSIFICATION else "R@1"


def gold_rank(scores: np.ndarray, gold: int) -> int:
    """Zero-based rank of the gold; equal scores at lower indices rank ahead of it."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    ahead = np.sum(scores > scores[gold]) + np.sum(scores[:gold] == scores[gold])
    return int(ahead)


def _examples(dataset: TaskDataset, split: Union[Split, str], max_examples: Optional[int]) -> List[Example]:
    examples = dataset.split(split)
    if not examples:
        raise ConfigurationError(f"{dataset.name}/{Split(split).value} has no examples to evaluate")
    return examples[:max_examples] if max_examples else list(examples)


class TransferMatrix(BaseModel):
    """Rows are training regimes, columns evaluation tasks.

    ``None`` marks a cell that failed (explained in ``errors``) or was never evaluated.
    """

    model_config = ConfigDict(extra="forbid")

    rows: List[str]
    columns: List[str]
    cells: Dict[str, Dict[str, Optional[float]]]
    errors: Dict[str, Dict[str, str]] = Field(default_factory=dict)
    metric_names: Dict[str, str] = Field(default_factory=dict)
    row_header: str = "regime"
    show_average: bool = True

    def average(self, row: str) -> Optional[float]:
        values = [v for v in self.cells[row].values() if v is not None]
        return sum(values) / len(values) if values else None

    def render(self) -> str:
        headers = [self.row_header,
                   *(f"{c} ({self.metric_names.get(c, '')})".replace(" ()", "") for c in self.columns)]
        if self.show_average:
            headers.append("average")
        table = [headers]
        for row in self.rows:
            failed = self.errors.get(row, {})
            line = [row, *(_fmt(self.cells[row].get(col), "ERR" if col in failed else "-") for col in self.columns)]
            if self.show_average:
                line.append(_fmt(self.average(row), "-"))
            table.append(line)
        widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in table]
        lines.insert(1, "  ".join("-" * w for w in widths))
        for row, failures in self.errors.items():
            for col, message in failures.items():
                lines.append(f"! {row} / {col}: {message}")
        return "\n".join(lines) + "\n"


def _fmt(value: Optional[float], missing: str = "ERR") -> str:
    return missing if value is None else f"{100 * value:.2f}"


class StyleGate(BaseModel):
    model_config = ConfigDict(extra="forbid")

    style_id: int
    count: int
    mean_weights: List[float]


class GateReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: str
    split: str
    metric: str
    n_combiners: int
    degenerate: bool
    note: Optional[str] = None
    full_metric: float
    probe_metrics: List[float]
    styles: List[StyleGate]
    reconstruction_batches: int
    reconstruction_max_error: float

    def render(self) -> str:
        lines = [f"gate report: {self.task}/{self.split} ({self.n_combiners} combiners)"]
        if self.note:
            lines.append(f"note: {self.note}")
        lines.append(f"full model {self.metric}: {100 * self.full_metric:.2f}")
        for i, value in enumerate(self.probe_metrics):
            lines.append(f"combiner {i} alone {self.metric}: {100 * value:.2f}")
        for style in self.styles:
            weights = " ".join(f"{w:.3f}" for w in style.mean_weights)
            lines.append(f"style {style.style_id} (n={style.count}): {weights}")
        lines.append(
            f"reconstruction over {self.reconstruction_batches} batches: max error {self.reconstruction_max_error:.3e}"
        )
        return "\n".join(lines) + "\n"


def write_report(path: Path, text: str, data: BaseModel) -> List[Path]:
    """Write ``<path>.txt`` and its ``<path>.json`` twin atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for suffix, payload in ((".txt", text), (".json", json.dumps(data.model_dump(mode="json"), indent=2) + "\n")):
        target = path.with_suffix(suffix)
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_text(payload, encoding="utf-8")
        os.replace(tmp, target)
        written.append(target)
    return written


class EvaluationService:
    """Scores models against fixed, seeded evaluation pools."""

    def recall_at_k(
        self,
        scorer: Scorer,
        dataset: TaskDataset,
        split: Union[Split, str],
        seed: int,
        k: int = 1,
        max_examples: Optional[int] = None,
        probe_index: Optional[int] = None,
    ) -> float:
        if not scorer.supports_ranking:
            raise ConfigurationError("scorer has no ranking head")
        if k < 1:
            raise ConfigurationError(f"k must be at least 1, got {k}")
        builder = CandidatePoolBuilder(dataset, split, seed)
        cache: dict = {}
        hits = 0
        examples = _examples(dataset, split, max_examples)
        for example in examples:
            pool = builder.pool_for(example)
            scores = scorer.score_candidates(example, pool, probe_index=probe_index, cache=cache)
            if gold_rank(scores, builder.gold_position(example, pool)) < k:
                hits += 1
        return hits / len(examples)

    def recall_at_1(self, scorer: Scorer, dataset: TaskDataset, split: Union[Split, str], seed: int,
                    max_examples: Optional[int] = None, probe_index: Optional[int] = None) -> float:
        return self.recall_at_k(scorer, dataset, split, seed, 1, max_examples, probe_index)

    def classification_accuracy(
        self,
        scorer: Scorer,
        dataset: TaskDataset,
        split: Union[Split, str],
        max_examples: Optional[int] = None,
        probe_index: Optional[int] = None,
    ) -> float:
        """Mean credit of the argmax answer; soft targets credit the target's value there."""
        if not scorer.supports_classification:
            raise ConfigurationError("scorer has no classification head")
        if dataset.answers is None:
            raise ConfigurationError(f"{dataset.name} has no answer vocabulary")
        examples = _examples(dataset, split, max_examples)
        credit = 0.0
        for example in examples:
            if not example.has_classification_target:
                raise ConfigurationError(f"example {example.id!r} has no answer target")
            logits = scorer.answer_logits(example, probe_index=probe_index)
            if logits.size != dataset.answers.size:
                raise CompatibilityError(
                    f"model scores {logits.size} answers, {dataset.name} declares {dataset.answers.size}"
                )
            credit += float(example.answer_target(dataset.answers.size)[argmax_lowest(logits)])
        return credit / len(examples)

    def task_metric(
        self,
        scorer: Scorer,
        dataset: TaskDataset,
        split: Union[Split, str],
        seed: int,
        head: Optional[HeadType] = None,
        max_examples: Optional[int] = None,
        probe_index: Optional[int] = None,
    ) -> float:
        head = metric_head(head or dataset.head)
        if head is HeadType.CLASSIFICATION:
            return self.classification_accuracy(scorer, dataset, split, max_examples, probe_index)
        return self.recall_at_1(scorer, dataset, split, seed, max_examples, probe_index)

    def evaluate_tasks(
        self,
        scorer: Scorer,
        tasks: Sequence[TaskDataset],
        split: Union[Split, str],
        seed: int,
        heads: Optional[Mapping[str, HeadType]] = None,
        max_examples: Optional[int] = None,
    ) -> Dict[str, float]:
        heads = heads or {}
        metrics = {}
        for dataset in tasks:
            metrics[dataset.name] = self.task_metric(
                scorer, dataset, split, seed, heads.get(dataset.name, dataset.head), max_examples
            )
        return metrics

    def transfer_matrix(
        self,
        regimes: Mapping[str, Scorer],
        tasks: Sequence[TaskDataset],
        split: Union[Split, str],
        seed: int,
        max_examples: Optional[int] = None,
    ) -> TransferMatrix:
        """Evaluate every regime on every task; a failing cell is recorded and skipped."""
        cells: Dict[str, Dict[str, Optional[float]]] = {}
        errors: Dict[str, Dict[str, str]] = {}
        for regime, scorer in regimes.items():
            cells[regime] = {}
            for dataset in tasks:
                try:
                    cells[regime][dataset.name] = self.task_metric(
                        scorer, dataset, split, seed, max_examples=max_examples
                    )
                except TransResNetError as e:
                    logger.warning(f"Transfer cell {regime}/{dataset.name} failed: {e}")
                    cells[regime][dataset.name] = None
                    errors.setdefault(regime, {})[dataset.name] = str(e)
        return TransferMatrix(
            rows=list(regimes),
            columns=[d.name for d in tasks],
            cells=cells,
            errors=errors,
            metric_names={d.name: metric_name(d.head) for d in tasks},
        )

    def gate_report(
        self,
        model,
        dataset: TaskDataset,
        split: Union[Split, str],
        seed: int,
        max_examples: Optional[int] = None,
        reconstruction_batches: int = 10,
        batch_size: int = 8,
    ) -> GateReport:
        """Mean gate weights per style, per-combiner probe metrics and a reconstruction check.

        The check confirms that the gate-weighted sum of the probed combiner outputs
        reproduces the full joint vector.
        """
        split = Split(split)
        examples = _examples(dataset, split, max_examples)
        n = model.n_combiners

        by_style: Dict[int, List[np.ndarray]] = {}
        for example in examples:
            gate = model.gate_for(example)
            by_style.setdefault(example.style_id, []).append(np.asarray(gate.weights))
        styles = [
            StyleGate(style_id=s, count=len(ws), mean_weights=np.mean(ws, axis=0).tolist())
            for s, ws in sorted(by_style.items())
        ]

        head = metric_head(dataset.head)
        full = self.task_metric(model, dataset, split, seed, head, max_examples)
        probes = [self.task_metric(model, dataset, split, seed, head, max_examples, probe_index=i) for i in range(n)]

        max_error, batches = 0.0, 0
        with no_grad():
            for start in range(0, len(examples), batch_size):
                if batches >= reconstruction_batches:
                    break
                chunk = examples[start:start + batch_size]
                joints, gates = model.joints(chunk)
                probed = [model.joints(chunk, probe_index=i)[0].data for i in range(n)]
                weights = np.array([g.weights for g in gates])
                rebuilt = sum(weights[:, [i]] * probed[i] for i in range(n))
                max_error = max(max_error, float(np.max(np.abs(rebuilt - joints.data))))
                batches += 1

        note = None
        if n == 1:
            note = "single combiner: the gate is constant 1.0 and the probe equals the full model"
        report = GateReport(
            task=dataset.name,
            split=split.value,
            metric=metric_name(head),
            n_combiners=n,
            degenerate=n == 1,
            note=note,
            full_metric=full,
            probe_metrics=probes,
            styles=styles,
            reconstruction_batches=batches,
            reconstruction_max_error=max_error,
        )
        logger.info(f"Gate report for {dataset.name}: full={full:.4f} probes={[round(p, 4) for p in probes]}")
        return report
