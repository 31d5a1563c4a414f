# Handlers package
from .ablate import AblateHandler
from .base import BaseHandler
from .evaluate import EvalHandler
from .gen_data import GenDataHandler
from .inspect_checkpoint import InspectCheckpointHandler
from .train import TrainHandler

HANDLERS = (GenDataHandler, TrainHandler, EvalHandler, AblateHandler, InspectCheckpointHandler)

__all__ = [
    'AblateHandler',
    'BaseHandler',
    'EvalHandler',
    'GenDataHandler',
    'HANDLERS',
    'InspectCheckpointHandler',
    'TrainHandler',
]
