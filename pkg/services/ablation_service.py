"""Ablation suites: each ablation expands into independent runs and a summary table.

Runs write into disjoint directories and never share state, so the optional parallel
mode executes them in worker processes without changing any result.
"""
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import parse_config
from data.models import HeadType, Split, TaskDataset
from data.repository import DatasetRepository
from data.sampling import downsample, downsample_curve
from exceptions import CompatibilityError, ConfigurationError, TransResNetError
from models.config import ModelConfig
from models.transresnet import TransResNetModel
from services.checkpoint_service import CheckpointService
from services.evaluation_service import EvaluationService, TransferMatrix, metric_name, write_report
from services.manifest_service import ManifestService
from services.schemas import TrainConfig
from services.trainer_service import TrainerService

AblationKind = Literal[
    "early_stop", "mt_ft", "heads", "freeze", "single_combiner", "layer_matched", "downsample", "image_features",
]
PARAMETER_TOLERANCE = 0.01
HEAD_COLUMNS = (HeadType.CLASSIFICATION, HeadType.RANKING)
MULTI_HEAD_LABEL = "multi-head"


class AblationSuiteConfig(BaseModel):
    """Which ablations to replay, on which datasets, with which base configuration."""

    model_config = ConfigDict(extra="forbid")

    datasets: List[Path]
    output_dir: Path
    ablations: List[AblationKind]
    model: Dict[str, object] = Field(default_factory=dict)
    train: TrainConfig = Field(default_factory=TrainConfig)
    seed: int = 0
    eval_split: Split = Split.TEST
    max_eval_examples: Optional[int] = Field(default=None, ge=1)
    heads_task: Optional[str] = None
    downsample_task: Optional[str] = None
    downsample_points: int = Field(default=5, ge=1)
    downsample_smallest: float = Field(default=0.25, gt=0.0, le=1.0)
    probe_combiners: int = Field(default=3, ge=2, le=4)
    layer_matched_combiners: List[int] = Field(default_factory=lambda: [2, 3, 4])
    workers: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check(self):
        if not self.ablations:
            raise ValueError("name at least one ablation")
        if any(not 1 <= n <= 4 for n in self.layer_matched_combiners):
            raise ValueError("layer_matched_combiners entries must lie in [1, 4]")
        return self


class RunSpec(BaseModel):
    """One training run inside an ablation, fully described by plain data."""

    model_config = ConfigDict(extra="forbid")

    ablation: str
    label: str
    run_dir: Path
    datasets: List[Path]
    train_tasks: List[str]
    model: Dict[str, object] = Field(default_factory=dict)
    train: TrainConfig
    seed: int
    eval_split: Split
    max_eval_examples: Optional[int] = None
    eval_heads: Dict[str, HeadType] = Field(default_factory=dict)
    report_heads: Dict[str, List[HeadType]] = Field(default_factory=dict)
    downsample_task: Optional[str] = None
    downsample_size: Optional[float] = None
    table_row: Optional[str] = None
    table_column: Optional[str] = None
    fine_tune: bool = False
    probe: bool = False


class RunOutcome(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ablation: str
    label: str
    run_dir: str
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None
    rows: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    head_metrics: Dict[str, Dict[str, float]] = Field(default_factory=dict)
    parameter_count: Optional[int] = None
    combiner_parameter_count: Optional[int] = None
    checks: Dict[str, object] = Field(default_factory=dict)


class AblationSummary(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ablation: str
    table: TransferMatrix
    detail: Optional[TransferMatrix] = None
    notes: List[str] = Field(default_factory=list)
    failures: Dict[str, str] = Field(default_factory=dict)

    def render(self) -> str:
        text = f"== {self.ablation} ==\n" + self.table.render()
        if self.detail is not None:
            text += "\n" + self.detail.render()
        for note in self.notes:
            text += f"note: {note}\n"
        for label, error in self.failures.items():
            text += f"FAILED {label}: {error}\n"
        return text


def _load(spec: RunSpec) -> Dict[str, TaskDataset]:
    repository = DatasetRepository()
    datasets = {}
    for path in spec.datasets:
        dataset = repository.load_dataset(path)
        datasets[dataset.name] = dataset
    missing = [t for t in spec.train_tasks if t not in datasets]
    if missing:
        raise ConfigurationError(f"run {spec.label!r} trains on unknown tasks {missing}")
    return datasets


def _evaluate(evaluation: EvaluationService, model, datasets, spec: RunSpec) -> Dict[str, float]:
    metrics = {}
    for name, dataset in datasets.items():
        metrics[name] = evaluation.task_metric(
            model, dataset, spec.eval_split, spec.seed, spec.eval_heads.get(name), spec.max_eval_examples
        )
    return metrics


def run_experiment(spec: RunSpec) -> RunOutcome:
    """Train, evaluate and record one run; failures are captured in the outcome."""
    checkpoints = CheckpointService()
    evaluation = EvaluationService()
    trainer = TrainerService(evaluation, checkpoints)
    manifests = ManifestService()
    run_dir = Path(spec.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = manifests.start(f"ablate:{spec.ablation}", spec.model_dump(mode="json"), spec.seed, spec.datasets)
    outcome = RunOutcome(ablation=spec.ablation, label=spec.label, run_dir=str(run_dir))
    outputs: List[Path] = []
    logger.info(f"[{spec.ablation}] run {spec.label!r} -> {run_dir}")
    try:
        datasets = _load(spec)
        if spec.downsample_task is not None and spec.downsample_size is not None:
            datasets[spec.downsample_task] = downsample(
                datasets[spec.downsample_task], spec.downsample_size, spec.seed
            )
        config = ModelConfig.for_datasets(datasets.values(), **{"init_seed": spec.seed, **spec.model})
        model = TransResNetModel(config)
        outcome.parameter_count = model.parameter_count()
        outcome.combiner_parameter_count = model.parameter_groups().get("combiner", 0)
        cfg = spec.train.model_copy(update={"seed": spec.seed})

        frozen_before = None
        if cfg.freeze_encoders:
            initial = model.state_dict()
            frozen_before = {n: initial[n] for n in model.encoder_parameter_names()}

        metrics_log = run_dir / "metrics.jsonl"
        metrics_log.unlink(missing_ok=True)
        best, _ = trainer.train(model, [datasets[t] for t in spec.train_tasks], cfg, metrics_log=metrics_log)
        outputs += [checkpoints.save(best, run_dir / "checkpoint.ckpt"), metrics_log]

        if frozen_before is not None:
            after = best.parameters
            outcome.checks["freeze_contract"] = all(
                np.array_equal(value, after[name]) for name, value in frozen_before.items()
            )

        outcome.rows[spec.label] = _evaluate(evaluation, model, datasets, spec)
        for task, heads in spec.report_heads.items():
            for head in heads:
                outcome.head_metrics.setdefault(head.value, {})[task] = evaluation.task_metric(
                    model, datasets[task], spec.eval_split, spec.seed, head, spec.max_eval_examples
                )

        if spec.probe:
            for name, dataset in datasets.items():
                report = evaluation.gate_report(model, dataset, spec.eval_split, spec.seed, spec.max_eval_examples)
                outputs += write_report(run_dir / f"gates_{name}", report.render(), report)
                for i, value in enumerate(report.probe_metrics):
                    outcome.rows.setdefault(f"combiner {i} only", {})[name] = value
                outcome.checks[f"reconstruction_error_{name}"] = report.reconstruction_max_error

        if spec.fine_tune:
            for task in spec.train_tasks:
                tuned = trainer.fine_tune(best, datasets[task], cfg)
                outputs.append(checkpoints.save(tuned, run_dir / f"finetuned_{task}.ckpt"))
                tuned_model = TransResNetModel(tuned.architecture)
                tuned_model.load_state_dict(tuned.parameters)
                outcome.rows[f"MT+FT {task}"] = _evaluate(evaluation, tuned_model, datasets, spec)
    except (TransResNetError, OSError, FloatingPointError) as e:
        logger.error(f"❌ [{spec.ablation}] run {spec.label!r} failed: {type(e).__name__}: {e}")
        outcome.status, outcome.error = "failed", f"{type(e).__name__}: {e}"

    manifest.checks = dict(outcome.checks)
    manifests.finish(manifest, run_dir / "manifest.json", outputs, outcome.status, outcome.error)
    return outcome


class AblationService:
    """Expands a suite into runs, executes them and writes one summary per ablation."""

    def __init__(self, repository: Optional[DatasetRepository] = None):
        self.repository = repository or DatasetRepository()

    def plan_ablation(self, kind: str, suite: AblationSuiteConfig, datasets: List[TaskDataset]) -> List[RunSpec]:
        planners = {
            "early_stop": self._plan_early_stop,
            "mt_ft": self._plan_mt_ft,
            "heads": self._plan_heads,
            "freeze": self._plan_freeze,
            "single_combiner": self._plan_single_combiner,
            "layer_matched": self._plan_layer_matched,
            "downsample": self._plan_downsample,
            "image_features": self._plan_image_features,
        }
        if kind not in planners:
            raise ConfigurationError(f"unknown ablation {kind!r}")
        return planners[kind](suite, datasets, [d.name for d in datasets])

    def _spec(self, suite: AblationSuiteConfig, kind: str, label: str, slug: str, train_tasks: List[str],
              **fields) -> RunSpec:
        model = {**suite.model, **fields.pop("model", {})}
        train = parse_config(TrainConfig, {**suite.train.model_dump(), **fields.pop("train", {})})
        return RunSpec(
            ablation=kind, label=label, run_dir=suite.output_dir / kind / slug, datasets=suite.datasets,
            train_tasks=train_tasks, model=model, train=train, seed=suite.seed, eval_split=suite.eval_split,
            max_eval_examples=suite.max_eval_examples, **fields,
        )

    def _plan_early_stop(self, suite, datasets, names) -> List[RunSpec]:
        specs = [self._spec(suite, "early_stop", "stop on average", "average", names,
                            train={"early_stop_criterion": "average"})]
        for name in names:
            specs.append(self._spec(suite, "early_stop", f"stop on {name}", f"task_{name}", names,
                                    train={"early_stop_criterion": f"task:{name}"}))
        return specs

    def _plan_mt_ft(self, suite, datasets, names) -> List[RunSpec]:
        return [self._spec(suite, "mt_ft", "MT", "mt", names, fine_tune=True)]

    def _plan_heads(self, suite, datasets, names) -> List[RunSpec]:
        task = suite.heads_task or next((d.name for d in datasets if d.answers is not None), None)
        if task is None or task not in names:
            raise ConfigurationError("heads ablation needs a task with an answer vocabulary")
        specs = []
        for head, label in ((HeadType.CLASSIFICATION, "classification head"),
                            (HeadType.RANKING, "ranking head"),
                            (HeadType.BOTH, MULTI_HEAD_LABEL)):
            eval_head = HeadType.RANKING if head is HeadType.RANKING else HeadType.CLASSIFICATION
            trained = [h for h in HEAD_COLUMNS if h is head or head is HeadType.BOTH]
            specs.append(self._spec(
                suite, "heads", label, head.value, [task],
                train={"head_modes": {task: head}, "early_stop_criterion": f"task:{task}"},
                eval_heads={task: eval_head},
                report_heads={task: trained},
            ))
        return specs

    def _plan_freeze(self, suite, datasets, names) -> List[RunSpec]:
        return [
            self._spec(suite, "freeze", "fine-tune encoders", "finetune", names, train={"freeze_encoders": False}),
            self._spec(suite, "freeze", "freeze encoders", "frozen", names, train={"freeze_encoders": True}),
        ]

    def _plan_single_combiner(self, suite, datasets, names) -> List[RunSpec]:
        label = f"{suite.probe_combiners}-AMMC"
        return [self._spec(suite, "single_combiner", label, "ammc", names,
                           model={"n_combiners": suite.probe_combiners}, probe=True)]

    def _plan_layer_matched(self, suite, datasets, names) -> List[RunSpec]:
        per = int(suite.model.get("layers_per_combiner", ModelConfig().layers_per_combiner))
        specs = []
        for n in suite.layer_matched_combiners:
            specs.append(self._spec(suite, "layer_matched", f"MMC {n * per} layers", f"mmc_{n * per}", names,
                                    model={"n_combiners": 1, "layers_per_combiner": n * per}))
            specs.append(self._spec(suite, "layer_matched", f"{n}-AMMC", f"ammc_{n}", names,
                                    model={"n_combiners": n, "layers_per_combiner": per}))
        return specs

    def _plan_downsample(self, suite, datasets, names) -> List[RunSpec]:
        task = suite.downsample_task or names[0]
        if task not in names:
            raise ConfigurationError(f"downsample task {task!r} is not among {names}")
        n_train = len(next(d for d in datasets if d.name == task).train)
        regimes = [("ST", [task])]
        if len(names) > 1:
            regimes.append(("MT", names))
        else:
            logger.warning(f"downsample: {task} is the only task, no multi-task column")
        specs = []
        for fraction in downsample_curve(suite.downsample_points, suite.downsample_smallest):
            size = max(1, int(round(fraction * n_train)))
            for regime, tasks in regimes:
                specs.append(self._spec(
                    suite, "downsample", f"{regime} {task} n={size}", f"{regime.lower()}_{fraction:g}", tasks,
                    train={"early_stop_criterion": f"task:{task}"},
                    downsample_task=task, downsample_size=fraction,
                    table_row=f"n={size}", table_column=regime,
                ))
        return specs

    def _plan_image_features(self, suite, datasets, names) -> List[RunSpec]:
        return [
            self._spec(suite, "image_features", f"MT {mode}", mode, names, model={"image_features": mode})
            for mode in ("both", "global", "regional", "none")
        ]

    def execute(self, specs: List[RunSpec], workers: int = 0) -> List[RunOutcome]:
        """Run sequentially, or in ``workers`` processes; outcomes keep the input order."""
        if workers and len(specs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(run_experiment, specs))
        return [run_experiment(spec) for spec in specs]

    def summarise(self, kind: str, outcomes: List[RunOutcome], datasets: List[TaskDataset],
                  specs: List[RunSpec]) -> AblationSummary:
        cells: Dict[str, Dict[str, Optional[float]]] = {}
        errors: Dict[str, Dict[str, str]] = {}
        failures: Dict[str, str] = {}
        columns = [d.name for d in datasets]
        for outcome in outcomes:
            if outcome.status == "failed":
                failures[outcome.label] = outcome.error or "unknown error"
                cells[outcome.label] = {c: None for c in columns}
                errors[outcome.label] = {c: "run failed" for c in columns}
                continue
            for label, metrics in outcome.rows.items():
                cells[label] = {c: metrics.get(c) for c in columns}
        names = {d.name: metric_name(d.head) for d in datasets}
        table = TransferMatrix(rows=list(cells), columns=columns, cells=cells, errors=errors, metric_names=names)
        notes = self._notes(kind, outcomes)
        for spec in specs:
            for task, head in spec.eval_heads.items():
                if metric_name(head) != names.get(task):
                    notes.append(f"{spec.label}: {task} reports {metric_name(head)}")

        detail = None
        if kind == "heads":
            detail = self._heads_table(outcomes, specs)
            if detail is not None:
                notes += self._multi_head_gains(detail)
        elif kind == "downsample":
            detail = self._curve_table(outcomes, specs, names)
            if detail is not None:
                notes += self._column_gaps(detail)
        return AblationSummary(ablation=kind, table=table, detail=detail, notes=notes, failures=failures)

    @staticmethod
    def _heads_table(outcomes: List[RunOutcome], specs: List[RunSpec]) -> Optional[TransferMatrix]:
        """One row per training regime, one column per head evaluated on the answer task."""
        task = next((t for s in specs for t in s.report_heads), None)
        if task is None:
            return None
        columns = [f"{h.value} head" for h in HEAD_COLUMNS]
        cells: Dict[str, Dict[str, Optional[float]]] = {}
        errors: Dict[str, Dict[str, str]] = {}
        for outcome in outcomes:
            if outcome.status == "failed":
                cells[outcome.label] = {c: None for c in columns}
                errors[outcome.label] = {c: "run failed" for c in columns}
                continue
            cells[outcome.label] = {
                f"{h.value} head": outcome.head_metrics.get(h.value, {}).get(task) for h in HEAD_COLUMNS
            }
        return TransferMatrix(
            rows=list(cells), columns=columns, cells=cells, errors=errors,
            metric_names={f"{h.value} head": f"{task} {metric_name(h)}" for h in HEAD_COLUMNS},
            row_header="training", show_average=False,
        )

    @staticmethod
    def _curve_table(outcomes: List[RunOutcome], specs: List[RunSpec],
                     names: Dict[str, str]) -> Optional[TransferMatrix]:
        """Target-task metric per training size, single-task next to multi-task."""
        if not specs:
            return None
        task = specs[0].downsample_task
        cells: Dict[str, Dict[str, Optional[float]]] = {}
        errors: Dict[str, Dict[str, str]] = {}
        columns: List[str] = []
        for spec, outcome in zip(specs, outcomes):
            row, column = spec.table_row or spec.label, spec.table_column or "run"
            if column not in columns:
                columns.append(column)
            row_cells = cells.setdefault(row, {})
            if outcome.status == "failed":
                row_cells[column] = None
                errors.setdefault(row, {})[column] = "run failed"
            else:
                row_cells[column] = outcome.rows.get(spec.label, {}).get(task)
        return TransferMatrix(
            rows=list(cells), columns=columns, cells=cells, errors=errors,
            metric_names={c: f"{task} {names.get(task, '')}".rstrip() for c in columns},
            row_header=f"{task} train size", show_average=False,
        )

    @staticmethod
    def _multi_head_gains(detail: TransferMatrix) -> List[str]:
        """Each head trained jointly versus the same head trained alone."""
        multi = detail.cells.get(MULTI_HEAD_LABEL)
        if multi is None:
            return []
        notes = []
        for column in detail.columns:
            alone, joint = detail.cells.get(column, {}).get(column), multi.get(column)
            if alone is not None and joint is not None:
                gain = 100 * (joint - alone)
                notes.append(f"{column}: {MULTI_HEAD_LABEL} - {column} alone = {gain:+.2f} points")
        return notes

    @staticmethod
    def _column_gaps(detail: TransferMatrix) -> List[str]:
        """Difference between the last and first column of each fully evaluated row."""
        if len(detail.columns) < 2:
            return []
        first, last = detail.columns[0], detail.columns[-1]
        notes = []
        for row in detail.rows:
            a, b = detail.cells[row].get(first), detail.cells[row].get(last)
            if a is not None and b is not None:
                notes.append(f"{row}: {last} - {first} = {100 * (b - a):+.2f} points")
        return notes

    def _notes(self, kind: str, outcomes: List[RunOutcome]) -> List[str]:
        notes = []
        for outcome in outcomes:
            for name, value in outcome.checks.items():
                notes.append(f"{outcome.label}: {name} = {value}")
        if kind == "layer_matched":
            notes += self._parameter_audit(outcomes)
        return notes

    def _parameter_audit(self, outcomes: List[RunOutcome]) -> List[str]:
        """Compare combiner parameter counts of each (MMC control, n-AMMC) pair, planned adjacently."""
        notes = []
        for control, ammc in zip(outcomes[0::2], outcomes[1::2]):
            if not control.combiner_parameter_count or ammc.combiner_parameter_count is None:
                continue
            gap = layer_matched_gap(ammc.combiner_parameter_count, control.combiner_parameter_count)
            status = "ok" if gap <= PARAMETER_TOLERANCE else "MISMATCH"
            notes.append(
                f"{ammc.label} combiner params {ammc.combiner_parameter_count} vs {control.label} "
                f"{control.combiner_parameter_count}: {100 * gap:.3f}% ({status})"
            )
            if gap > PARAMETER_TOLERANCE:
                logger.warning(f"Layer-matched control {control.label} is {100 * gap:.2f}% off {ammc.label}")
        return notes

    def run_suite(self, suite: AblationSuiteConfig, workers: Optional[int] = None) -> Dict[str, AblationSummary]:
        """Plan, execute and summarise every requested ablation; failures never stop the suite."""
        datasets = [self.repository.load_dataset(p) for p in suite.datasets]
        workers = suite.workers if workers is None else workers
        summaries = {}
        for kind in suite.ablations:
            try:
                specs = self.plan_ablation(kind, suite, datasets)
            except TransResNetError as e:
                logger.error(f"Ablation {kind} could not be planned: {e}")
                table = TransferMatrix(rows=[], columns=[d.name for d in datasets], cells={})
                summary = AblationSummary(ablation=kind, table=table, failures={kind: str(e)})
            else:
                logger.info(f"Ablation {kind}: {len(specs)} runs")
                outcomes = self.execute(specs, workers)
                summary = self.summarise(kind, outcomes, datasets, specs)
            write_report(suite.output_dir / kind / "summary", summary.render(), summary)
            summaries[kind] = summary
        return summaries


def layer_matched_gap(ammc_params: int, control_params: int) -> float:
    """Relative gap between the combiner parameter counts of an AMMC and its MMC control."""
    if not control_params:
        raise CompatibilityError("control model has no combiner parameters")
    return abs(ammc_params - control_params) / control_params
