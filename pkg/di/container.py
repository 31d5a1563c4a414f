from data.repository import DatasetRepository
from services.ablation_service import AblationService
from services.checkpoint_service import CheckpointService
from services.evaluation_service import EvaluationService
from services.manifest_service import ManifestService
from services.trainer_service import TrainerService


class Container:
    """Dependency injection container."""
    
    def __init__(self):
        self._dataset_repository: DatasetRepository | None = None
        
        # Services
        self._checkpoint_service: CheckpointService | None = None
        self._evaluation_service: EvaluationService | None = None
        self._trainer_service: TrainerService | None = None
        self._ablation_service: AblationService | None = None
        self._manifest_service: ManifestService | None = None
    
    @property
    def dataset_repository(self) -> DatasetRepository:
        """Get dataset repository instance."""
        if self._dataset_repository is None:
            self._dataset_repository = DatasetRepository()
        return self._dataset_repository
    
    @property
    def checkpoint_service(self) -> CheckpointService:
        """Get checkpoint service instance."""
        if self._checkpoint_service is None:
            self._checkpoint_service = CheckpointService()
        return self._checkpoint_service
    
    @property
    def evaluation_service(self) -> EvaluationService:
        """Get evaluation service instance."""
        if self._evaluation_service is None:
            self._evaluation_service = EvaluationService()
        return self._evaluation_service
    
    @property
    def trainer_service(self) -> TrainerService:
        """Get trainer service instance."""
        if self._trainer_service is None:
            self._trainer_service = TrainerService(self.evaluation_service, self.checkpoint_service)
        return self._trainer_service
    
    @property
    def ablation_service(self) -> AblationService:
        """Get ablation service instance."""
        if self._ablation_service is None:
            self._ablation_service = AblationService(self.dataset_repository)
        return self._ablation_service
    
    @property
    def manifest_service(self) -> ManifestService:
        """Get manifest service instance."""
        if self._manifest_service is None:
            self._manifest_service = ManifestService()
        return self._manifest_service
    
    def reset(self) -> None:
        """Drop every cached instance."""
        self.__init__()


# Global container instance
container = Container()
