import argparse
from pathlib import Path

from loguru import logger

from config import load_config, settings
from handlers.base import BaseHandler
from services.ablation_service import AblationSuiteConfig


class AblateHandler(BaseHandler):
    """Replay a suite of ablations; each writes its runs and a summary table."""

    command = "ablate"
    help = "run an ablation suite"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--config", type=Path, required=True, help="AblationSuiteConfig JSON file")
        parser.add_argument("--workers", type=int, default=None,
                            help="parallel worker processes (default: config value, then MMC_ABLATE_WORKERS)")

    def handle(self, args: argparse.Namespace) -> int:
        suite = load_config(AblationSuiteConfig, args.config)
        workers = args.workers if args.workers is not None else (suite.workers or settings.ablate_workers)
        manifests = self.get_manifest_service()
        manifest = manifests.start(self.command, suite.model_dump(mode="json"), suite.seed,
                                   [args.config, *suite.datasets])

        summaries = self.get_ablation_service().run_suite(suite, workers=workers)
        outputs = []
        failed = 0
        for kind, summary in summaries.items():
            outputs += [suite.output_dir / kind / "summary.txt", suite.output_dir / kind / "summary.json"]
            failed += len(summary.failures)
            logger.info("\n" + summary.render())
        manifest.checks["failed_runs"] = failed
        manifests.finish(manifest, suite.output_dir / "manifest.json", outputs,
                         status="ok" if not failed else "partial")
        if failed:
            logger.warning(f"{failed} ablation runs failed; see the summaries")
        else:
            logger.info(f"✅ Ablation suite written to {suite.output_dir}")
        return 0
