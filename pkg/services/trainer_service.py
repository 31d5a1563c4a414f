"""Multi-task training with equal task sampling, early stopping and fine-tuning."""
import json
import math
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from autograd import Adam, AdamState
from autograd.tensor import backward
from data.models import HeadType, TaskDataset
from exceptions import CompatibilityError, ConfigurationError, TrainingError
from models.transresnet import TransResNetModel
from seeding import derive_seed, rng_for
from services.checkpoint_service import Checkpoint, CheckpointService, ResumeState
from services.evaluation_service import EvaluationService
from services.schemas import (
    MetricHistory,
    MetricSnapshot,
    SamplerState,
    TrainConfig,
    TrainerState,
    criterion_task,
)


def equal_task_schedule(tasks: Sequence[str], steps_per_epoch: int, seed: int) -> List[str]:
    """Every task exactly ``steps_per_epoch // len(tasks)`` times, in seeded order.

    The remainder ``steps_per_epoch % len(tasks)`` is dropped.
    """
    tasks = list(tasks)
    if not tasks:
        raise ConfigurationError("cannot schedule an empty task list")
    per_task = steps_per_epoch // len(tasks)
    if per_task < 1:
        raise ConfigurationError(f"steps_per_epoch={steps_per_epoch} is smaller than the {len(tasks)} tasks")
    dropped = steps_per_epoch - per_task * len(tasks)
    if dropped:
        logger.info(f"Dropping {dropped} remainder steps so {len(tasks)} tasks get {per_task} updates each")
    schedule = [task for task in tasks for _ in range(per_task)]
    order = rng_for(seed, "schedule").permutation(len(schedule))
    return [schedule[i] for i in order]


class TaskBatchSampler:
    """Seeded passes over one task's train split; a pass never wraps mid-batch."""

    def __init__(self, dataset: TaskDataset, batch_size: int, seed: int, state: Optional[SamplerState] = None):
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.state = state.model_copy() if state is not None else SamplerState()
        self._perm_pass: Optional[int] = None
        self._perm: Optional[np.ndarray] = None

    def _permutation(self) -> np.ndarray:
        if self._perm_pass != self.state.pass_index:
            n = len(self.dataset.train)
            self._perm = rng_for(self.seed, "batches", self.dataset.name, self.state.pass_index).permutation(n)
            self._perm_pass = self.state.pass_index
        return self._perm

    def next_batch(self):
        n = len(self.dataset.train)
        if self.state.cursor + self.batch_size > n:
            self.state.pass_index += 1
            self.state.cursor = 0
        perm = self._permutation()
        picks = perm[self.state.cursor:self.state.cursor + self.batch_size]
        self.state.cursor += self.batch_size
        return [self.dataset.train[int(i)] for i in picks]


@dataclass
class TrainResult:
    best: Checkpoint
    history: MetricHistory
    last: Checkpoint
    completed: bool


class MetricsLog:
    """Append-only JSON lines, one validation snapshot per line."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, snapshot: MetricSnapshot, train_losses: Optional[Dict[str, float]] = None) -> None:
        record = snapshot.model_dump(mode="json")
        if train_losses:
            record["train_losses"] = train_losses
        with self.path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


class TrainerService:
    """Runs the training loop and the multi-task-then-fine-tune pipeline."""

    def __init__(self, evaluation_service: Optional[EvaluationService] = None,
                 checkpoint_service: Optional[CheckpointService] = None):
        self.evaluation_service = evaluation_service or EvaluationService()
        self.checkpoint_service = checkpoint_service or CheckpointService()

    # Startup checks

    def _heads(self, model: TransResNetModel, tasks: Sequence[TaskDataset], cfg: TrainConfig) -> Dict[str, HeadType]:
        names = [t.name for t in tasks]
        if not tasks:
            raise ConfigurationError("training needs at least one task")
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate task names: {names}")
        target = criterion_task(cfg.early_stop_criterion)
        if target is not None and target not in names:
            raise ConfigurationError(f"early-stop criterion names task {target!r}, not among {names}")
        unknown = sorted(set(cfg.head_modes) - set(names))
        if unknown:
            raise ConfigurationError(f"head_modes names unknown tasks: {unknown}")

        heads = {}
        for dataset in tasks:
            head = cfg.head_for(dataset.name, dataset.head)
            if not dataset.train:
                raise ConfigurationError(f"task {dataset.name!r} has an empty train split")
            if not dataset.supports(head, "train"):
                raise ConfigurationError(f"task {dataset.name!r} lacks the targets its {head.value} head needs")
            if head.uses_ranking and min(cfg.batch_size, len(dataset.train)) < 2:
                raise ConfigurationError(f"task {dataset.name!r}: ranking needs batches of at least 2 examples")
            if head.uses_classification:
                if not model.supports_classification:
                    raise ConfigurationError(f"task {dataset.name!r} needs a classification head the model lacks")
                if dataset.answers != model.config.answers:
                    raise CompatibilityError(f"task {dataset.name!r} answer vocabulary differs from the model's")
            heads[dataset.name] = head
        return heads

    def _steps_per_epoch(self, tasks: Sequence[TaskDataset], cfg: TrainConfig) -> int:
        if cfg.steps_per_epoch is not None:
            requested = cfg.steps_per_epoch
        else:
            largest = max(len(t.train) for t in tasks)
            requested = len(tasks) * math.ceil(largest / cfg.batch_size)
        return (requested // len(tasks)) * len(tasks)

    # Training loop

    def train(self, model: TransResNetModel, tasks: Sequence[TaskDataset], cfg: TrainConfig,
              **kwargs) -> Tuple[Checkpoint, MetricHistory]:
        result = self.run(model, tasks, cfg, **kwargs)
        return result.best, result.history

    def run(
        self,
        model: TransResNetModel,
        tasks: Sequence[TaskDataset],
        cfg: TrainConfig,
        *,
        resume: Optional[Checkpoint] = None,
        resume_path: Optional[Path] = None,
        metrics_log: Optional[Path] = None,
        stop_after_step: Optional[int] = None,
        progress: bool = False,
    ) -> TrainResult:
        """Train ``model`` in place and return the selected and the latest state.

        ``stop_after_step`` interrupts the loop after that many updates; the returned
        ``last`` checkpoint then resumes the run exactly via ``resume``.
        """
        tasks = list(tasks)
        heads = self._heads(model, tasks, cfg)
        names = [t.name for t in tasks]
        by_name = {t.name: t for t in tasks}
        spe = self._steps_per_epoch(tasks, cfg)
        eval_every = cfg.eval_every or spe
        total_steps = cfg.max_epochs * spe
        if cfg.max_steps is not None:
            total_steps = min(total_steps, cfg.max_steps)
        eval_seed = derive_seed(cfg.seed, "eval")

        frozen = model.encoder_parameter_names() if cfg.freeze_encoders else []
        trainable = {n: p for n, p in model.named_parameters() if n not in set(frozen)}
        history = MetricHistory()
        state = TrainerState()
        optimizer = Adam(trainable, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
        best_params: Optional[Dict[str, np.ndarray]] = None
        best_optimizer: Optional[AdamState] = None

        if resume is not None:
            if resume.resume is None:
                raise CompatibilityError("checkpoint carries no resume state")
            if resume.task_names != names:
                raise CompatibilityError(f"resume state was recorded for tasks {resume.task_names}, not {names}")
            model.load_state_dict(resume.parameters)
            optimizer.state = resume.optimizer.copy()
            history = resume.history.model_copy(deep=True)
            state = resume.resume.trainer.model_copy(deep=True)
            best_params = resume.resume.best_parameters
            best_optimizer = resume.resume.best_optimizer
            logger.info(f"Resuming at step {state.step} of {total_steps}")

        samplers = {
            t.name: TaskBatchSampler(t, min(cfg.batch_size, len(t.train)), cfg.seed, state.samplers.get(t.name))
            for t in tasks
        }
        log = MetricsLog(metrics_log) if metrics_log is not None else None
        logger.info(
            f"Training on {names}: {spe} steps/epoch, {total_steps} steps, eval every {eval_every}, "
            f"criterion {cfg.early_stop_criterion}, frozen tensors {len(frozen)}"
        )

        def snapshot_state() -> Checkpoint:
            state.samplers = {name: s.state.model_copy() for name, s in samplers.items()}
            return Checkpoint(
                architecture=model.config,
                parameters=model.state_dict(),
                optimizer=optimizer.state.copy(),
                train_config=cfg,
                task_names=names,
                history=history.model_copy(deep=True),
                selected_step=state.best_step,
                resume=ResumeState(trainer=state.model_copy(deep=True), best_parameters=best_params,
                                   best_optimizer=best_optimizer),
            )

        def evaluate(step: int) -> bool:
            """Record a snapshot; returns True when patience is exhausted."""
            nonlocal best_params, best_optimizer
            metrics = self.evaluation_service.evaluate_tasks(
                model, tasks, cfg.eval_split, eval_seed, heads, cfg.max_eval_examples
            )
            snapshot = history.add(step, step // spe, metrics)
            value = snapshot.value(cfg.early_stop_criterion)
            if log is not None:
                log.append(snapshot, history.train_losses[-1] if history.train_losses else None)
            if state.best_value is None or value > state.best_value:
                state.best_value, state.best_step, state.bad_evals = value, step, 0
                best_params = model.state_dict()
                best_optimizer = optimizer.state.copy()
            else:
                state.bad_evals += 1
            logger.info(
                f"step {step}: " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items())
                + f" avg={snapshot.average:.4f} (best step {state.best_step})"
            )
            return state.bad_evals >= cfg.patience

        completed = True
        context = model.frozen(frozen) if frozen else nullcontext()
        with context:
            if state.step == 0 and not history.snapshots:
                state.stopped_early = evaluate(0)
                if resume_path is not None:
                    self.checkpoint_service.save(snapshot_state(), resume_path)

            bar = tqdm(total=total_steps, initial=state.step, desc="train", disable=not progress, leave=False)
            schedule_epoch, schedule = None, []
            while state.step < total_steps and not state.stopped_early:
                if stop_after_step is not None and state.step >= stop_after_step:
                    completed = False
                    break
                epoch, position = divmod(state.step, spe)
                if epoch != schedule_epoch:
                    schedule = equal_task_schedule(names, spe, derive_seed(cfg.seed, "epoch", epoch))
                    schedule_epoch = epoch
                task = schedule[position]
                self._train_step(model, optimizer, samplers[task].next_batch(), task, heads[task], cfg, state)
                state.step += 1
                bar.update(1)

                if state.step % spe == 0:
                    history.train_losses.append({
                        name: state.epoch_loss_sums[name] / state.epoch_loss_counts[name]
                        for name in names if state.epoch_loss_counts.get(name)
                    })
                    state.epoch_loss_sums, state.epoch_loss_counts = {}, {}
                if state.step % eval_every == 0 or state.step == total_steps:
                    state.stopped_early = evaluate(state.step)
                    if state.stopped_early:
                        logger.info(f"Early stop at step {state.step}: {cfg.patience} evaluations without improvement")
                    if resume_path is not None:
                        self.checkpoint_service.save(snapshot_state(), resume_path)
            bar.close()

        last = snapshot_state()
        if not completed:
            logger.info(f"Interrupted after step {state.step}")
            if resume_path is not None:
                self.checkpoint_service.save(last, resume_path)
            return TrainResult(best=last, history=history, last=last, completed=False)

        model.load_state_dict(best_params)
        best = Checkpoint(
            architecture=model.config,
            parameters=best_params,
            optimizer=best_optimizer,
            train_config=cfg,
            task_names=names,
            history=history,
            selected_step=state.best_step,
        )
        logger.info(f"Selected step {state.best_step} ({cfg.early_stop_criterion}={state.best_value:.4f})")
        return TrainResult(best=best, history=history, last=last, completed=True)

    def _train_step(self, model, optimizer, batch, task, head, cfg, state) -> None:
        loss, parts = model.batch_loss(batch, head, cfg.mix)
        if not np.isfinite(parts["loss"]):
            raise TrainingError("non-finite loss", task=task, step=state.step)
        backward(loss)
        try:
            optimizer.step()
        except TrainingError as e:
            raise TrainingError("non-finite gradient", parameter=e.parameter, task=task, step=state.step) from e
        finally:
            model.zero_grad()
        state.epoch_loss_sums[task] = state.epoch_loss_sums.get(task, 0.0) + parts["loss"]
        state.epoch_loss_counts[task] = state.epoch_loss_counts.get(task, 0) + 1

    # Pipelines

    def check_compatible(self, checkpoint: Checkpoint, task: TaskDataset) -> None:
        """Raise ``CompatibilityError`` when ``task`` does not fit the checkpoint's vocabularies."""
        arch = checkpoint.architecture
        if task.head.uses_classification and task.answers != arch.answers:
            raise CompatibilityError(f"{task.name}: answer vocabulary differs from the checkpoint's")
        if any(s >= arch.style_vocab for s in task.style_space):
            raise CompatibilityError(f"{task.name}: style ids exceed the checkpoint's style vocabulary {arch.style_vocab}")
        if task.d_img_global and task.d_img_global != arch.d_img_global:
            raise CompatibilityError(f"{task.name}: global image width {task.d_img_global} != {arch.d_img_global}")
        if task.d_img_regional and task.d_img_regional != arch.d_img_regional:
            raise CompatibilityError(
                f"{task.name}: regional image width {task.d_img_regional} != {arch.d_img_regional}"
            )
        for example in task.train + task.valid + task.test:
            for token in list(example.context_tokens) + list(example.gold_text or []):
                if token >= arch.vocab_size:
                    raise CompatibilityError(
                        f"{task.name}: token {token} in {example.id!r} exceeds vocabulary {arch.vocab_size}"
                    )

    def fine_tune(self, checkpoint: Checkpoint, task: TaskDataset, cfg: TrainConfig, **kwargs) -> Checkpoint:
        """Continue training on one task, early-stopped on that task's validation metric."""
        self.check_compatible(checkpoint, task)
        if cfg.max_steps == 0:
            logger.info(f"Fine-tune on {task.name} allowed 0 steps; returning the input parameters")
            return Checkpoint(
                architecture=checkpoint.architecture,
                parameters={k: v.copy() for k, v in checkpoint.parameters.items()},
                optimizer=checkpoint.optimizer.copy() if checkpoint.optimizer else None,
                train_config=cfg,
                task_names=[task.name],
                history=checkpoint.history.model_copy(deep=True),
                selected_step=checkpoint.selected_step,
            )
        model = TransResNetModel(checkpoint.architecture)
        model.load_state_dict(checkpoint.parameters)
        cfg = cfg.model_copy(update={"early_stop_criterion": f"task:{task.name}"})
        best, _ = self.train(model, [task], cfg, **kwargs)
        return best
