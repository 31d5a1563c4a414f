from typing import Sequence

import numpy as np

from autograd import ops
from autograd.tensor import Tensor
from exceptions import VocabIndexError
from layers.module import Module, parameter


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of ``table``; gradients scatter back additively to the looked-up rows."""
    size = table.shape[0]
    for i in ids:
        if not 0 <= int(i) < size:
            raise VocabIndexError(int(i), size)
    return ops.take(table, [int(i) for i in ids], axis=0)


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.num_embeddings = num_embeddings
        self.dim = dim
        self.table = parameter(rng.normal(0.0, dim ** -0.5, size=(num_embeddings, dim)))

    def __call__(self, ids: Sequence[int]) -> Tensor:
        return embedding_lookup(self.table, ids)
