"""AdamW with a linearly decaying learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Gradients, Tensor
from .errors import ContractError


@dataclass
class OptimState:
    lr: float
    horizon: int
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self) -> float:
        """Learning rate for the next update: ``lr * (1 - step / horizon)``, floored at 0."""
        return self.lr * max(0.0, 1.0 - self.step / self.horizon)


def adamw_step(params: Sequence[Tensor], grads: Gradients, state: OptimState) -> None:
    """Decoupled weight decay followed by a bias-corrected Adam update, in place on ``params``."""
    if set(map(id, grads)) != set(map(id, params)):
        raise ContractError("gradients must cover exactly the trainable parameters")
    lr = state.current_lr()
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    for p in params:
        g = grads[p]
        if g.shape != p.shape:
            raise ContractError(f"gradient {g.shape} does not match parameter {p.name} {p.shape}")
        m = state.m.get(p, np.zeros(p.shape))
        v = state.v.get(p, np.zeros(p.shape))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[p], state.v[p] = m, v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        decayed = p.data * (1.0 - lr * state.weight_decay)
        p.data = decayed - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    state.step = t
