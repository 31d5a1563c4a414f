from .tensor import Tensor, backward, is_grad_enabled, no_grad
from .optim import Adam, AdamState, adam_step

__all__ = [
    'Tensor',
    'backward',
    'is_grad_enabled',
    'no_grad',
    'Adam',
    'AdamState',
    'adam_step',
]
