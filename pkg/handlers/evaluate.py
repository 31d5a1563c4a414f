import argparse
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from loguru import logger
from pydantic import BaseModel, ConfigDict

from data.models import HeadType, Split
from exceptions import ConfigurationError, DataError
from handlers.base import BaseHandler
from models.transresnet import TransResNetModel
from seeding import derive_seed
from services.checkpoint_service import Checkpoint
from services.evaluation_service import write_report


class TaskMetrics(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checkpoint: str
    split: str
    seed: int
    metrics: Dict[str, float]
    recall_at_k: Dict[str, float] = {}
    k: int = 1
    recorded: Optional[Dict[str, float]] = None

    def render(self) -> str:
        lines = [f"{self.checkpoint} on {self.split} (seed {self.seed})"]
        for task, value in self.metrics.items():
            line = f"  {task}: {100 * value:.2f}"
            if task in self.recall_at_k:
                line += f"  R@{self.k}={100 * self.recall_at_k[task]:.2f}"
            if self.recorded and task in self.recorded:
                line += f"  (recorded at selected step: {100 * self.recorded[task]:.2f})"
            lines.append(line)
        return "\n".join(lines) + "\n"


def parse_checkpoint_arg(value: str) -> Tuple[str, Path]:
    """``regime=path`` or a bare path (regime named after the file)."""
    if "=" in value:
        regime, path = value.split("=", 1)
        if not regime:
            raise argparse.ArgumentTypeError(f"empty regime name in {value!r}")
        return regime, Path(path)
    return Path(value).stem, Path(value)


def model_from(checkpoint: Checkpoint) -> TransResNetModel:
    model = TransResNetModel(checkpoint.architecture)
    model.load_state_dict(checkpoint.parameters)
    return model


class EvalHandler(BaseHandler):
    """Per-task metrics, a transfer matrix across checkpoints and gate reports."""

    command = "eval"
    help = "evaluate checkpoints on datasets"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--checkpoint", type=parse_checkpoint_arg, action="append", required=True,
                            metavar="[REGIME=]PATH", help="checkpoint to evaluate (repeatable)")
        parser.add_argument("--datasets", type=Path, nargs="+", required=True, help="dataset files")
        parser.add_argument("--report", type=Path, required=True, help="report path prefix")
        parser.add_argument("--split", choices=[s.value for s in Split], default=Split.VALID.value)
        parser.add_argument("--seed", type=int, default=None,
                            help="candidate-pool seed (default: the seed the checkpoint was trained with)")
        parser.add_argument("--k", type=int, default=1, help="also report R@k for ranking tasks when k > 1")
        parser.add_argument("--max-examples", type=int, default=None, help="evaluate only the first N examples")

    def handle(self, args: argparse.Namespace) -> int:
        datasets = self.load_datasets(args.datasets)
        checkpoints = self.get_checkpoint_service()
        evaluation = self.get_evaluation_service()
        manifests = self.get_manifest_service()
        regimes = dict(args.checkpoint)
        if len(regimes) != len(args.checkpoint):
            raise ConfigurationError("regime names must be unique")

        manifest = manifests.start(
            self.command, {"split": args.split, "k": args.k, "max_examples": args.max_examples,
                           "checkpoints": {r: str(p) for r, p in regimes.items()}},
            args.seed if args.seed is not None else 0, [*regimes.values(), *args.datasets],
        )
        outputs: List[Path] = []
        models: Dict[str, TransResNetModel] = {}
        seeds: Dict[str, int] = {}
        manifest.checks["checkpoint_integrity"] = {
            regime: self._integrity(manifests, path) for regime, path in regimes.items()
        }
        for regime, path in regimes.items():
            checkpoint = checkpoints.load(path)
            model = model_from(checkpoint)
            models[regime] = model
            seed, heads, max_examples = self._eval_settings(checkpoint, args)
            seeds[regime] = seed
            own = [d for d in datasets if d.name in checkpoint.task_names] or datasets
            metrics = evaluation.evaluate_tasks(model, own, args.split, seed, heads, max_examples)
            recall_k = {}
            if args.k > 1:
                recall_k = {
                    d.name: evaluation.recall_at_k(model, d, args.split, seed, args.k, max_examples)
                    for d in own if d.head.uses_ranking
                }
            recorded = checkpoint.selected_metrics if args.split == checkpoint_split(checkpoint) else None
            report = TaskMetrics(checkpoint=str(path), split=args.split, seed=seed, metrics=metrics,
                                 recall_at_k=recall_k, k=args.k, recorded=recorded)
            outputs += write_report(_prefixed(args.report, f"metrics_{regime}"), report.render(), report)
            logger.info(report.render().rstrip())

            for dataset in own:
                gates = evaluation.gate_report(model, dataset, args.split, seed, max_examples)
                outputs += write_report(
                    _prefixed(args.report, f"gates_{regime}_{dataset.name}"), gates.render(), gates
                )

        matrix_seed = args.seed if args.seed is not None else next(iter(seeds.values()))
        matrix = evaluation.transfer_matrix(models, datasets, args.split, matrix_seed, args.max_examples)
        outputs += write_report(_prefixed(args.report, "transfer"), matrix.render(), matrix)
        logger.info("\n" + matrix.render())
        manifests.finish(manifest, _prefixed(args.report, "manifest").with_suffix(".json"), outputs)
        return 0

    @staticmethod
    def _integrity(manifests, path: Path) -> str:
        """Compare a checkpoint with the checksum its run manifest recorded."""
        run_manifest = Path(path).parent / "manifest.json"
        if not run_manifest.is_file():
            return "unrecorded"
        try:
            recorded = manifests.load(run_manifest)
        except DataError as e:
            logger.warning(f"Cannot check {path} against {run_manifest}: {e}")
            return "unrecorded"
        if manifests.recorded(recorded, path) is None:
            return "unrecorded"
        if manifests.verify(recorded, [path]):
            logger.warning(f"❌ {path} no longer matches the checksum in {run_manifest}")
            return "changed"
        return "ok"

    @staticmethod
    def _eval_settings(checkpoint: Checkpoint, args) -> Tuple[int, Dict[str, HeadType], Optional[int]]:
        """Seed, head bindings and example cap, defaulting to what training evaluated with."""
        cfg = checkpoint.train_config
        seed = args.seed if args.seed is not None else derive_seed(cfg.seed if cfg else 0, "eval")
        heads = dict(cfg.head_modes) if cfg else {}
        max_examples = args.max_examples if args.max_examples is not None else (cfg.max_eval_examples if cfg else None)
        return seed, heads, max_examples


def checkpoint_split(checkpoint: Checkpoint) -> Optional[str]:
    return checkpoint.train_config.eval_split.value if checkpoint.train_config else None


def _prefixed(prefix: Path, name: str) -> Path:
    prefix = Path(prefix)
    return prefix.parent / f"{prefix.name}_{name}"
