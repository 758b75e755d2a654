"""
Dense tensors with an explicit, single-use gradient tape
"""
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ShapeMismatchError, TapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]
VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_ACTIVE_TAPE: ContextVar[Optional["GradTape"]] = ContextVar("ecfnet_active_tape", default=None)

FLOAT_DTYPES = {"float32": np.float32, "float64": np.float64}


def resolve_dtype(dtype: Union[str, np.dtype, type, None]) -> np.dtype:
    if dtype is None:
        return np.dtype(np.float64)
    if isinstance(dtype, str):
        return np.dtype(FLOAT_DTYPES[dtype])
    return np.dtype(dtype)


class Tensor:
    """Real N-d array plus an optional gradient slot.

    Values are read-only after construction; only ``grad`` changes, and only
    through :meth:`GradTape.backward` or :meth:`zero_grad`.
    """

    def __init__(self, values: ArrayLike, requires_grad: bool = False,
                 name: Optional[str] = None, dtype=None):
        if dtype is None and isinstance(values, np.ndarray) and values.dtype.kind == "f":
            dtype = values.dtype
        arr = np.array(values, dtype=resolve_dtype(dtype), copy=True)
        arr.flags.writeable = False
        self._values = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False, name: Optional[str] = None) -> "Tensor":
        """Adopt an array produced by an op without copying it"""
        # 0-d arithmetic yields numpy scalars, which carry no flags
        arr = np.asarray(arr)
        t = cls.__new__(cls)
        arr.flags.writeable = False
        t._values = arr
        t.grad = None
        t.requires_grad = requires_grad
        t.name = name
        return t

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._values.shape

    @property
    def ndim(self) -> int:
        return self._values.ndim

    @property
    def dtype(self) -> np.dtype:
        return self._values.dtype

    @property
    def size(self) -> int:
        return self._values.size

    def numpy(self) -> np.ndarray:
        return self._values

    def item(self) -> float:
        """The single value of a one-element tensor"""
        if self._values.size != 1:
            raise ShapeMismatchError("item", "size", 1, self._values.size)
        return float(self._values.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _set_values(self, arr: np.ndarray) -> None:
        if arr.shape != self._values.shape:
            raise TapeError(f"cannot rebind {self.name or 'tensor'} from {self.shape} to {arr.shape}")
        arr = np.array(arr, dtype=self._values.dtype, copy=True)
        arr.flags.writeable = False
        self._values = arr

    def detach(self) -> "Tensor":
        return Tensor._wrap(self._values, name=self.name)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self._values, dtype=dtype, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # arithmetic sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    def __radd__(self, other):
        from . import functional as F
        return F.add(other, self)

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    def __rmul__(self, other):
        from . import functional as F
        return F.mul(other, self)

    def __truediv__(self, other):
        from . import functional as F
        return F.div(self, other)

    def __neg__(self):
        from . import functional as F
        return F.neg(self)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        from . import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from . import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from . import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """Learnable tensor; the optimizer rebinds its values between steps"""

    def __init__(self, values: ArrayLike, name: Optional[str] = None, dtype=None):
        super().__init__(values, requires_grad=True, name=name, dtype=dtype)

    def assign(self, arr: np.ndarray) -> None:
        self._set_values(arr)


@dataclass
class TapeEntry:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


class GradTape:
    """Records differentiable ops executed inside its ``with`` block.

    A tape is replayed exactly once; call :meth:`reset` to reuse the object.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self.replayed = False
        self._tokens: List = []

    def __enter__(self) -> "GradTape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def reset(self) -> None:
        self.entries.clear()
        self.replayed = False

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, vjp: VJP) -> None:
        self.entries.append(TapeEntry(op, inputs, output, vjp))

    def backward(self, loss: Tensor) -> None:
        if self.replayed:
            raise TapeError("tape already replayed; reset() before recording a new pass")
        if loss.size != 1:
            raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}", shape=list(loss.shape))
        self.replayed = True

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        owners: Dict[int, Tensor] = {id(loss): loss}
        for entry in reversed(self.entries):
            g_out = grads.get(id(entry.output))
            if g_out is None:
                continue
            for tensor, g_in in zip(entry.inputs, entry.vjp(g_out)):
                if g_in is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + g_in
                else:
                    grads[key] = g_in
                    owners[key] = tensor

        for key, g in grads.items():
            tensor = owners[key]
            if not tensor.requires_grad:
                continue
            g = np.asarray(g, dtype=tensor.dtype).reshape(tensor.shape)
            tensor.grad = g if tensor.grad is None else tensor.grad + g

    def first_non_finite(self) -> Optional[str]:
        """Name of the first recorded tensor holding NaN or Inf, in execution order"""
        for index, entry in enumerate(self.entries):
            for tensor in entry.inputs:
                if tensor.name and not np.all(np.isfinite(tensor.values)):
                    return tensor.name
            if not np.all(np.isfinite(entry.output.values)):
                return entry.output.name or f"{entry.op}#{index}"
        return None


def active_tape() -> Optional[GradTape]:
    return _ACTIVE_TAPE.get()


def backward(loss: Tensor, tape: GradTape) -> None:
    tape.backward(loss)


def record_op(op: str, inputs: Tuple[Tensor, ...], out: np.ndarray, vjp: VJP) -> Tensor:
    """Wrap ``out`` and register it on the active tape when any input needs grad"""
    tape = _ACTIVE_TAPE.get()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor._wrap(out, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, inputs, result, vjp)
    return result
