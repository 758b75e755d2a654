"""
Adam with bias correction
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from ..autograd import Parameter
from ..config import TrainConfig
from ..errors import TapeError


@dataclass
class OptimizerState:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "OptimizerState":
        return cls(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    def ensure_slots(self, params: Mapping[str, Parameter]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros(p.shape, dtype=p.dtype)
                self.v[name] = np.zeros(p.shape, dtype=p.dtype)
            elif self.m[name].shape != p.shape:
                raise TapeError(f"optimizer slot {name} has shape {self.m[name].shape}, parameter {p.shape}")


def adam_step(params: Mapping[str, Parameter], state: OptimizerState) -> OptimizerState:
    """One update from the gradients stored on ``params``; rebinds parameter values"""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise TapeError(f"missing gradients for {len(missing)} parameter(s), first: {missing[0]}",
                        missing=missing[:10])
    state.ensure_slots(params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        m_hat = m / correction1
        v_hat = v / correction2
        p.assign(p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return state
