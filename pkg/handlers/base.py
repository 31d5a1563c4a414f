import argparse
from pathlib import Path
from typing import Iterable, List

from data.models import TaskDataset
from di.dependencies import (
    get_ablation_service,
    get_checkpoint_service,
    get_dataset_repository,
    get_evaluation_service,
    get_manifest_service,
    get_trainer_service,
)
from data.repository import DatasetRepository
from services.ablation_service import AblationService
from services.checkpoint_service import CheckpointService
from services.evaluation_service import EvaluationService
from services.manifest_service import ManifestService
from services.trainer_service import TrainerService


class BaseHandler:
    """Base handler class: one CLI verb registered on the shared router."""

    command: str = ""
    help: str = ""

    def register(self, router: argparse._SubParsersAction) -> argparse.ArgumentParser:
        """Add this verb's sub-parser to the router."""
        parser = router.add_parser(self.command, help=self.help, description=self.help)
        self.add_arguments(parser)
        parser.set_defaults(handler=self)
        return parser

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        pass

    def handle(self, args: argparse.Namespace) -> int:
        raise NotImplementedError

    def load_datasets(self, paths: Iterable[Path]) -> List[TaskDataset]:
        """Load and validate every dataset file."""
        repository = self.get_dataset_repository()
        return [repository.load_dataset(path) for path in paths]

    def get_dataset_repository(self) -> DatasetRepository:
        """Get dataset repository instance."""
        return get_dataset_repository()

    def get_checkpoint_service(self) -> CheckpointService:
        """Get checkpoint service instance."""
        return get_checkpoint_service()

    def get_evaluation_service(self) -> EvaluationService:
        """Get evaluation service instance."""
        return get_evaluation_service()

    def get_trainer_service(self) -> TrainerService:
        """Get trainer service instance."""
        return get_trainer_service()

    def get_ablation_service(self) -> AblationService:
        """Get ablation service instance."""
        return get_ablation_service()

    def get_manifest_service(self) -> ManifestService:
        """Get manifest service instance."""
        return get_manifest_service()
