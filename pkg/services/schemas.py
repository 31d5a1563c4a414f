"""Configuration and record types shared by the trainer, evaluator and checkpoints."""
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from data.models import HeadType, Split
from exceptions import ConfigurationError, DomainError

AVERAGE = "average"
TASK_PREFIX = "task:"


def criterion_task(criterion: str) -> Optional[str]:
    """Task named by a ``task:<name>`` criterion, ``None`` for ``average``."""
    if criterion == AVERAGE:
        return None
    if criterion.startswith(TASK_PREFIX) and len(criterion) > len(TASK_PREFIX):
        return criterion[len(TASK_PREFIX):]
    raise ConfigurationError(f"unknown early-stop criterion {criterion!r}; use 'average' or 'task:<name>'")


class TrainConfig(BaseModel):
    """Training hyperparameters.

    ``batch_size`` defaults to 32 at desk scale (full-scale runs used 256 / 512).
    An epoch is ``steps_per_epoch`` scheduler rounds, not a pass over any dataset.
    """

    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=32, ge=1)
    max_epochs: int = Field(default=10, ge=0)
    steps_per_epoch: Optional[int] = Field(default=None, ge=1)
    max_steps: Optional[int] = Field(default=None, ge=0)
    patience: int = Field(default=3, ge=1)
    early_stop_criterion: str = AVERAGE
    freeze_encoders: bool = False
    head_modes: Dict[str, HeadType] = Field(default_factory=dict)
    mix: float = Field(default=0.5, ge=0.0, le=1.0)
    seed: int = 0
    eval_every: Optional[int] = Field(default=None, ge=1)
    eval_split: Split = Split.VALID
    max_eval_examples: Optional[int] = Field(default=None, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)

    @field_validator("early_stop_criterion")
    @classmethod
    def _criterion(cls, value):
        try:
            criterion_task(value)
        except ConfigurationError as e:
            raise ValueError(str(e)) from None
        return value

    def head_for(self, task: str, default: HeadType) -> HeadType:
        return self.head_modes.get(task, default)


class MetricSnapshot(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: int = Field(ge=0)
    epoch: int = Field(ge=0)
    metrics: Dict[str, float]
    average: float

    @model_validator(mode="after")
    def _average(self):
        if self.metrics:
            expected = sum(self.metrics.values()) / len(self.metrics)
            if abs(expected - self.average) > 1e-12:
                raise ValueError(f"average {self.average} != mean of task metrics {expected}")
        return self

    def value(self, criterion: str) -> float:
        task = criterion_task(criterion)
        if task is None:
            return self.average
        if task not in self.metrics:
            raise ConfigurationError(f"criterion {criterion!r} names a task absent from the history")
        return self.metrics[task]


class MetricHistory(BaseModel):
    """Validation snapshots in step order plus per-epoch mean training losses."""

    model_config = ConfigDict(extra="forbid")

    snapshots: List[MetricSnapshot] = Field(default_factory=list)
    train_losses: List[Dict[str, float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _increasing(self):
        steps = [s.step for s in self.snapshots]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("snapshot steps must be strictly increasing")
        return self

    def add(self, step: int, epoch: int, metrics: Dict[str, float]) -> MetricSnapshot:
        if self.snapshots and step <= self.snapshots[-1].step:
            raise DomainError(f"snapshot step {step} does not follow {self.snapshots[-1].step}")
        average = sum(metrics.values()) / len(metrics) if metrics else 0.0
        snapshot = MetricSnapshot(step=step, epoch=epoch, metrics=dict(metrics), average=average)
        self.snapshots.append(snapshot)
        return snapshot

    def at_step(self, step: int) -> MetricSnapshot:
        for snapshot in self.snapshots:
            if snapshot.step == step:
                return snapshot
        raise DomainError(f"no snapshot at step {step}")


def select_checkpoint(history: MetricHistory, criterion: str) -> int:
    """Step maximising the criterion column; ties go to the earliest step."""
    criterion_task(criterion)
    if not history.snapshots:
        raise DomainError("cannot select a checkpoint from an empty history")
    best = history.snapshots[0]
    best_value = best.value(criterion)
    for snapshot in history.snapshots[1:]:
        value = snapshot.value(criterion)
        if value > best_value:
            best, best_value = snapshot, value
    return best.step


class SamplerState(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pass_index: int = 0
    cursor: int = 0


class TrainerState(BaseModel):
    """Counters needed to resume a run exactly where it stopped."""

    model_config = ConfigDict(extra="forbid")

    step: int = 0
    bad_evals: int = 0
    best_step: Optional[int] = None
    best_value: Optional[float] = None
    samplers: Dict[str, SamplerState] = Field(default_factory=dict)
    epoch_loss_sums: Dict[str, float] = Field(default_factory=dict)
    epoch_loss_counts: Dict[str, int] = Field(default_factory=dict)
    stopped_early: bool = False
