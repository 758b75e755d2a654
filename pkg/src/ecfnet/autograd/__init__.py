from . import functional
from .gradcheck import GradcheckCase, GradcheckReport, gradcheck, relative_error, run_suite
from .tensor import GradTape, Parameter, Tensor, active_tape, backward, resolve_dtype

__all__ = [
    "Tensor",
    "Parameter",
    "GradTape",
    "backward",
    "active_tape",
    "resolve_dtype",
    "functional",
    "gradcheck",
    "relative_error",
    "run_suite",
    "GradcheckCase",
    "GradcheckReport",
]
