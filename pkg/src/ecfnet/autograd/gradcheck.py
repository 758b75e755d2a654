"""
Central finite-difference gradient checking
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..errors import ConfigError
from .tensor import GradTape, Tensor


@dataclass
class GradcheckReport:
    name: str
    max_rel_error: float
    tol: float
    per_input: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.max(np.abs(analytic - numeric)) if analytic.size else 0.0
    scale = max(np.max(np.abs(analytic)) if analytic.size else 0.0,
                np.max(np.abs(numeric)) if numeric.size else 0.0,
                1e-12)
    return float(diff / scale)


def gradcheck(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5,
              tol: float = 1e-4, name: str = "f", max_entries: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> GradcheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` against central differences.

    With ``max_entries`` only that many randomly chosen coordinates per input
    are perturbed; the analytic gradient is compared on the same coordinates.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ConfigError(f"gradcheck needs float64 inputs, {t.name or 'input'} is {t.dtype}")
        t.zero_grad()
        t.requires_grad = True

    with GradTape() as tape:
        out = f(*inputs)
    tape.backward(out)
    analytic_all = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    rng = rng or np.random.default_rng(0)
    per_input: Dict[str, float] = {}
    for index, (t, analytic) in enumerate(zip(inputs, analytic_all)):
        flat_size = t.size
        if max_entries is not None and max_entries < flat_size:
            coords = np.sort(rng.choice(flat_size, size=max_entries, replace=False))
        else:
            coords = np.arange(flat_size)
        base = t.values.copy()
        numeric = np.empty(len(coords))
        for n, c in enumerate(coords):
            shifted = base.copy().reshape(-1)
            shifted[c] = base.reshape(-1)[c] + step
            t._set_values(shifted.reshape(t.shape))
            f_plus = f(*inputs).item()
            shifted[c] = base.reshape(-1)[c] - step
            t._set_values(shifted.reshape(t.shape))
            f_minus = f(*inputs).item()
            numeric[n] = (f_plus - f_minus) / (2.0 * step)
        t._set_values(base)
        label = t.name or f"input{index}"
        per_input[label] = relative_error(analytic.reshape(-1)[coords], numeric)

    for t in inputs:
        t.zero_grad()
    worst = max(per_input.values()) if per_input else 0.0
    return GradcheckReport(name=name, max_rel_error=worst, tol=tol, per_input=per_input)


def run_suite(cases: Sequence["GradcheckCase"], step: float = 1e-5) -> List[GradcheckReport]:
    return [case.run(step) for case in cases]


@dataclass
class GradcheckCase:
    """A named gradcheck; ``build`` returns (f, inputs) so every run is fresh"""
    name: str
    build: Callable[[], tuple]
    tol: float = 1e-4
    max_entries: Optional[int] = None

    def run(self, step: float = 1e-5) -> GradcheckReport:
        f, inputs = self.build()
        return gradcheck(f, inputs, step=step, tol=self.tol, name=self.name, max_entries=self.max_entries)
