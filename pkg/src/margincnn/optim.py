"""Adam optimizer over the model's named parameter tensors.

Standard first/second-moment estimates with bias correction and a single
global step counter shared by all parameters:

    m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
    theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)

Updates are applied in place; callers must serialize steps on one
(model, state) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError
from .layers import ModelParams


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(model: ModelParams) -> AdamState:
    """Zeroed moment accumulators shaped like every model tensor."""
    state = AdamState()
    for name, p in model.named_tensors().items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(
    model: ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: AdamConfig,
) -> tuple[ModelParams, AdamState]:
    """One update over all parameters; rejects non-finite gradients."""
    params = model.named_tensors()
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise TrainingError(f"missing gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise TrainingError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    return model, state
