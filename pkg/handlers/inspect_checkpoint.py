import argparse
from pathlib import Path

from handlers.base import BaseHandler
from models.transresnet import TransResNetModel


class InspectCheckpointHandler(BaseHandler):
    """Print a checkpoint's version, configuration, parameter groups and history."""

    command = "inspect-checkpoint"
    help = "describe a checkpoint file"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("path", type=Path, help="checkpoint file")

    def handle(self, args: argparse.Namespace) -> int:
        checkpoint = self.get_checkpoint_service().load(args.path)
        print(self.describe(checkpoint))
        return 0

    @staticmethod
    def describe(checkpoint) -> str:
        arch = checkpoint.architecture
        model = TransResNetModel(arch)
        lines = [
            f"format version: {checkpoint.format_version}",
            f"tasks: {', '.join(checkpoint.task_names) or '-'}",
            f"combiners: {arch.n_combiners} x {arch.layers_per_combiner} layers, d_model={arch.d_model}",
            "model config: " + arch.model_dump_json(exclude={"answers"}),
            f"answers: {arch.n_answers}",
            f"parameters: {sum(p.size for p in checkpoint.parameters.values())}",
        ]
        for group, count in model.parameter_groups().items():
            lines.append(f"  {group}: {count}")
        if checkpoint.train_config is not None:
            lines.append("train config: " + checkpoint.train_config.model_dump_json())
        if checkpoint.optimizer is not None:
            lines.append(f"optimizer: Adam step {checkpoint.optimizer.step}")
        snapshots = checkpoint.history.snapshots
        lines.append(f"history: {len(snapshots)} evaluations, {len(checkpoint.history.train_losses)} epochs")
        for snapshot in snapshots:
            marker = " *" if snapshot.step == checkpoint.selected_step else ""
            metrics = " ".join(f"{k}={v:.4f}" for k, v in snapshot.metrics.items())
            lines.append(f"  step {snapshot.step}: {metrics} avg={snapshot.average:.4f}{marker}")
        lines.append(f"selected step: {checkpoint.selected_step}")
        if checkpoint.resume is not None:
            lines.append(f"resume state at step {checkpoint.resume.trainer.step}")
        return "\n".join(lines)
