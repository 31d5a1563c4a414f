import argparse
from pathlib import Path
from typing import Dict, List

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from config import load_config
from exceptions import CompatibilityError, ConfigurationError, DataError
from handlers.base import BaseHandler
from models.config import ModelConfig
from models.transresnet import TransResNetModel
from services.schemas import TrainConfig, criterion_task

CHECKPOINT_NAME = "checkpoint.ckpt"
RESUME_NAME = "resume.ckpt"
METRICS_NAME = "metrics.jsonl"
MANIFEST_NAME = "manifest.json"


class RunConfig(BaseModel):
    """Configuration of one ``train`` invocation."""

    model_config = ConfigDict(extra="forbid")

    datasets: List[Path]
    output_dir: Path
    seed: int = 0
    model: Dict[str, object] = Field(default_factory=dict)
    train: TrainConfig = Field(default_factory=TrainConfig)


class TrainHandler(BaseHandler):
    """Train one model on one or more tasks and write checkpoint, metrics log and manifest."""

    command = "train"
    help = "train a model from a run config"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--config", type=Path, required=True, help="RunConfig JSON file")
        parser.add_argument("--resume", action="store_true", help="continue from <output_dir>/resume.ckpt")
        parser.add_argument("--stop-after", type=int, default=None, metavar="STEPS",
                            help="interrupt after this many updates (continue later with --resume)")
        parser.add_argument("--no-progress", action="store_true", help="disable the progress bar")

    def handle(self, args: argparse.Namespace) -> int:
        run = load_config(RunConfig, args.config)
        cfg = run.train.model_copy(update={"seed": run.seed})
        out = run.output_dir
        datasets = self.load_datasets(run.datasets)

        target = criterion_task(cfg.early_stop_criterion)
        if target is not None and target not in [d.name for d in datasets]:
            raise ConfigurationError(
                f"early-stop criterion names task {target!r}, suite has {[d.name for d in datasets]}"
            )

        checkpoints = self.get_checkpoint_service()
        resume = None
        if args.resume:
            resume_path = out / RESUME_NAME
            if not resume_path.is_file():
                raise DataError(f"--resume given but {resume_path} does not exist")
            resume = checkpoints.load(resume_path)
            if resume.train_config != cfg:
                raise CompatibilityError("resume state was written under a different train config")
            config = resume.architecture
        else:
            config = ModelConfig.for_datasets(datasets, **{"init_seed": run.seed, **run.model})
            (out / METRICS_NAME).unlink(missing_ok=True)

        model = TransResNetModel(config)
        logger.info(f"Model has {model.parameter_count()} parameters: {model.parameter_groups()}")
        frozen_before = None
        if cfg.freeze_encoders:
            initial = resume.parameters if resume is not None else model.state_dict()
            frozen_before = {name: initial[name] for name in model.encoder_parameter_names()}

        manifests = self.get_manifest_service()
        manifest = manifests.start(self.command, run.model_dump(mode="json"), run.seed,
                                   [args.config, *run.datasets])
        result = self.get_trainer_service().run(
            model, datasets, cfg,
            resume=resume,
            resume_path=out / RESUME_NAME,
            metrics_log=out / METRICS_NAME,
            stop_after_step=args.stop_after,
            progress=not args.no_progress,
        )
        if not result.completed:
            logger.info(f"Run interrupted; continue with: train --config {args.config} --resume")
            manifests.finish(manifest, out / MANIFEST_NAME, [out / RESUME_NAME, out / METRICS_NAME],
                             status="interrupted")
            return 0

        checkpoint_path = checkpoints.save(result.best, out / CHECKPOINT_NAME)
        if cfg.freeze_encoders:
            manifest.checks["freeze_contract"] = self._freeze_contract(frozen_before, result.best.parameters)
        manifest.checks["selected_step"] = result.best.selected_step
        manifest.checks["selected_metrics"] = result.best.selected_metrics
        manifests.finish(manifest, out / MANIFEST_NAME, [checkpoint_path, out / METRICS_NAME])
        logger.info(f"✅ Checkpoint written to {checkpoint_path}")
        return 0

    @staticmethod
    def _freeze_contract(before: Dict[str, np.ndarray], after: Dict[str, np.ndarray]) -> bool:
        """Bit-compare of the frozen encoder groups before and after training."""
        intact = all(np.array_equal(value, after[name]) for name, value in before.items())
        if not intact:
            logger.error("Freeze contract violated: encoder parameters changed during training")
        return intact
