from .container import container
from .dependencies import (
    get_ablation_service,
    get_checkpoint_service,
    get_dataset_repository,
    get_evaluation_service,
    get_manifest_service,
    get_trainer_service,
)

__all__ = [
    'container',
    'get_ablation_service',
    'get_checkpoint_service',
    'get_dataset_repository',
    'get_evaluation_service',
    'get_manifest_service',
    'get_trainer_service',
]
