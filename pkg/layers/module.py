"""Parameter registry shared by every layer and model."""
from contextlib import contextmanager
from typing import Dict, Iterable, Iterator, Mapping, Tuple

import numpy as np

from autograd.tensor import Tensor
from exceptions import CompatibilityError, ConfigurationError


class Module:
    """Base class that registers parameters and sub-modules in declaration order.

    Assigning a ``Tensor`` with ``requires_grad=True`` or a ``Module`` to an attribute
    registers it; ``named_parameters`` walks the registry depth-first, so the order is
    stable and doubles as the checkpoint layout.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, key, value):
        if "_params" not in self.__dict__:
            raise RuntimeError(f"{type(self).__name__}.__init__ must call Module.__init__ first")
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
            if value.name is None:
                value.name = key
        elif isinstance(value, Module):
            self._children[key] = value
        object.__setattr__(self, key, value)

    def add_module(self, key: str, module: "Module") -> None:
        setattr(self, key, module)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for key, param in self._params.items():
            yield f"{prefix}{key}", param
        for key, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{key}.")

    def parameters(self) -> Iterator[Tensor]:
        for _, param in self.named_parameters():
            yield param

    def parameter_count(self) -> int:
        return int(np.sum([p.size for p in self.parameters()], dtype=np.int64))

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise CompatibilityError(
                f"parameter sets differ: missing={missing[:5]} unexpected={unexpected[:5]}"
            )
        for name, param in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise CompatibilityError(f"parameter {name}: checkpoint shape {value.shape} != {param.shape}")
            param.data = value.copy()

    @contextmanager
    def frozen(self, names: Iterable[str]) -> Iterator[None]:
        """Stop gradient flow into the named parameters for the duration of the block."""
        own = dict(self.named_parameters())
        names = list(names)
        unknown = [n for n in names if n not in own]
        if unknown:
            raise ConfigurationError(f"cannot freeze unknown parameters: {unknown[:5]}")
        for name in names:
            own[name].requires_grad = False
            own[name].zero_grad()
        try:
            yield
        finally:
            for name in names:
                own[name].requires_grad = True


def uniform_init(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def parameter(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)
