"""
Exception hierarchy shared by every ECFNet module.

Each error carries the CLI exit code it maps to and a ``context`` dict of
structured fields that the structured logger flattens into the log record.
"""
from typing import Any, Dict


class EcfError(Exception):
    """Base class for all kit errors"""

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context: Dict[str, Any] = context


class ShapeMismatchError(EcfError, ValueError):
    exit_code = 2

    def __init__(self, op: str, dimension: str, expected: Any, actual: Any):
        super().__init__(
            f"{op}: {dimension} mismatch (expected {expected}, got {actual})",
            op=op, dimension=dimension, expected=expected, actual=actual,
        )
        self.op = op
        self.dimension = dimension


class TapeError(EcfError, RuntimeError):
    exit_code = 1


class ConfigError(EcfError, ValueError):
    exit_code = 2


class UnknownConfigKeyError(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown config key: {key}", key=key)
        self.key = key


class CheckpointConfigMismatch(ConfigError):
    def __init__(self, field: str, expected: Any, actual: Any):
        super().__init__(
            f"checkpoint config mismatch on {field}: expected {expected}, checkpoint has {actual}",
            field=field, expected=expected, actual=actual,
        )
        self.field = field


class PhantomSpecError(ConfigError):
    pass


class DataFormatError(EcfError, IOError):
    exit_code = 3


class ChecksumError(DataFormatError):
    pass


class NumericalAbort(EcfError, FloatingPointError):
    exit_code = 4

    def __init__(self, tensor_name: str, step: int):
        super().__init__(
            f"non-finite values at step {step}; first non-finite tensor: {tensor_name}",
            first_non_finite=tensor_name, step=step,
        )
        self.tensor_name = tensor_name
        self.step = step


class GradcheckFailure(EcfError, AssertionError):
    exit_code = 1

    def __init__(self, op: str, max_rel_error: float, tol: float):
        super().__init__(
            f"gradcheck failed for {op}: max relative error {max_rel_error:.3e} >= tol {tol:.1e}",
            op=op, max_rel_error=max_rel_error, tol=tol,
        )
        self.op = op
