"""Adam optimizer with bias correction."""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from autograd.tensor import Tensor
from exceptions import ConfigurationError, DimensionError, TrainingError


@dataclass
class AdamState:
    """Moments and hyperparameters for every tracked parameter.

    ``step`` counts update calls; ``counts`` holds per-parameter update counts used
    for bias correction, so a parameter first touched late is not under-corrected.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ConfigurationError(
                f"invalid Adam hyperparameters lr={self.lr} beta1={self.beta1} "
                f"beta2={self.beta2} eps={self.eps}"
            )
        if self.step < 0:
            raise ConfigurationError(f"Adam step must be non-negative, got {self.step}")

    def copy(self) -> "AdamState":
        return AdamState(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps, step=self.step,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            counts=dict(self.counts),
        )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One Adam update; returns new parameter arrays and the advanced state.

    Parameters whose gradient is ``None`` are returned unchanged and keep their moments.
    """
    for name, grad in grads.items():
        if grad is not None and not np.all(np.isfinite(grad)):
            raise TrainingError("non-finite gradient", parameter=name, step=state.step)

    new_state = state.copy()
    new_state.step += 1
    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        if grad.shape != value.shape:
            raise DimensionError(f"gradient for {name} does not match the parameter", value.shape, grad.shape)
        m = new_state.m.get(name)
        v = new_state.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        count = new_state.counts.get(name, 0) + 1
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1 ** count)
        v_hat = v / (1.0 - state.beta2 ** count)
        updated[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_state.m[name] = m
        new_state.v[name] = v
        new_state.counts[name] = count
    return updated, new_state


class Adam:
    """Applies ``adam_step`` in place to a set of named parameter tensors."""

    def __init__(self, params: Mapping[str, Tensor], state: Optional[AdamState] = None, **hyper):
        self.params: Dict[str, Tensor] = dict(params)
        self.state = state if state is not None else AdamState(**hyper)
        logger.debug(f"Adam tracking {len(self.params)} tensors (lr={self.state.lr})")

    def step(self) -> None:
        values = {name: p.data for name, p in self.params.items()}
        grads = {name: p.grad for name, p in self.params.items()}
        updated, self.state = adam_step(values, grads, self.state)
        for name, p in self.params.items():
            if grads[name] is not None:
                p.data = updated[name]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
