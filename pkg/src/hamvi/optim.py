"""First-order ascent updates. Both maximise: ``params + step``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    """Accumulators for one flat parameter vector.

    ``moment`` is the squared-gradient average for RMSProp and the first
    moment for Adamax; ``inf_norm`` is only used by Adamax.
    """

    method: str
    lr: float = 1e-3
    decay: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moment: np.ndarray = field(default=None, repr=False)
    inf_norm: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in ("rmsprop", "adamax"):
            raise ValueError(f"unknown optimizer {self.method!r}")

    @classmethod
    def for_params(cls, method, params, **kw) -> "OptimizerState":
        state = cls(method, **kw)
        state.moment = np.zeros_like(params, dtype=float)
        state.inf_norm = np.zeros_like(params, dtype=float)
        return state


def rmsprop_step(state: OptimizerState, params, grad):
    grad = np.asarray(grad, dtype=float)
    state.step += 1
    state.moment = state.decay * state.moment + (1.0 - state.decay) * grad**2
    return params + state.lr * grad / (np.sqrt(state.moment) + state.eps), state


def adamax_step(state: OptimizerState, params, grad):
    grad = np.asarray(grad, dtype=float)
    state.step += 1
    state.moment = state.beta1 * state.moment + (1.0 - state.beta1) * grad
    state.inf_norm = np.maximum(state.beta2 * state.inf_norm, np.abs(grad))
    rate = state.lr / (1.0 - state.beta1**state.step)
    return params + rate * state.moment / (state.inf_norm + state.eps), state


def apply_step(state: OptimizerState, params, grad):
    if state.method == "rmsprop":
        return rmsprop_step(state, params, grad)
    return adamax_step(state, params, grad)
