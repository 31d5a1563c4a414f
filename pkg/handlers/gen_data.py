import argparse
from pathlib import Path

from loguru import logger

from config import load_config, parse_config, settings
from data.synthetic import SyntheticSuiteConfig, SyntheticSuiteGenerator
from handlers.base import BaseHandler


class GenDataHandler(BaseHandler):
    """Emit the synthetic task suite, one dataset file per task, plus a manifest."""

    command = "gen-data"
    help = "generate the synthetic task suite"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--out", type=Path, required=True, help="output directory for <task>.jsonl files")
        parser.add_argument("--config", type=Path, default=None, help="SyntheticSuiteConfig JSON file")
        parser.add_argument("--seed", type=int, default=None, help="root seed (overrides the config file)")
        parser.add_argument("--train-size", type=int, default=None, help="train examples per task")

    def handle(self, args: argparse.Namespace) -> int:
        cfg = load_config(SyntheticSuiteConfig, args.config) if args.config else SyntheticSuiteConfig(
            seed=settings.default_seed
        )
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.train_size is not None:
            overrides["train_size"] = args.train_size
        if overrides:
            cfg = parse_config(SyntheticSuiteConfig, {**cfg.model_dump(), **overrides})

        manifests = self.get_manifest_service()
        manifest = manifests.start(self.command, cfg.model_dump(mode="json"), cfg.seed,
                                   [args.config] if args.config else [])
        repository = self.get_dataset_repository()
        outputs = []
        for dataset in SyntheticSuiteGenerator(cfg).generate():
            outputs.append(repository.save_dataset(dataset, args.out / f"{dataset.name}.jsonl"))
        manifests.finish(manifest, args.out / "manifest.json", outputs)
        logger.info(f"✅ Wrote {len(outputs)} datasets to {args.out}")
        return 0
