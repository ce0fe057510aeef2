"""Adam optimiser over the network's parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import DEFAULT_ADAM_EPS, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_LR
from .errors import SHAPE_ERROR, NetworkError

__all__ = ["AdamState", "adam_step"]


@dataclass(slots=True)
class AdamState:
    """Moment estimates, one array per parameter, plus the step counter."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_ADAM_EPS

    @property
    def initialized(self) -> bool:
        return bool(self.m)

    def copy(self) -> "AdamState":
        return AdamState(
            m=[a.copy() for a in self.m],
            v=[a.copy() for a in self.v],
            t=self.t,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update to ``params`` in place."""

    if len(params) != len(grads):
        raise NetworkError(SHAPE_ERROR, f"{len(params)} parameters but {len(grads)} gradients")
    if not state.initialized:
        state.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        state.v = [np.zeros(p.shape, dtype=np.float64) for p in params]
    if len(state.m) != len(params):
        raise NetworkError(SHAPE_ERROR, f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for param, grad, m, v in zip(params, grads, state.m, state.v):
        if param.shape != grad.shape or param.shape != m.shape:
            raise NetworkError(SHAPE_ERROR, f"parameter {param.shape} and gradient {grad.shape} disagree")
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        param -= update.astype(param.dtype, copy=False)
    return state

