from data.repository import DatasetRepository
from di.container import container
from services.ablation_service import AblationService
from services.checkpoint_service import CheckpointService
from services.evaluation_service import EvaluationService
from services.manifest_service import ManifestService
from services.trainer_service import TrainerService


def get_dataset_repository() -> DatasetRepository:
    """Get dataset repository dependency."""
    return container.dataset_repository


def get_checkpoint_service() -> CheckpointService:
    """Get checkpoint service dependency."""
    return container.checkpoint_service


def get_evaluation_service() -> EvaluationService:
    """Get evaluation service dependency."""
    return container.evaluation_service


def get_trainer_service() -> TrainerService:
    """Get trainer service dependency."""
    return container.trainer_service


def get_ablation_service() -> AblationService:
    """Get ablation service dependency."""
    return container.ablation_service


def get_manifest_service() -> ManifestService:
    """Get manifest service dependency."""
    return container.manifest_service
