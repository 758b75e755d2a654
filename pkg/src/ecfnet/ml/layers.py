"""
Parameter containers and the small layers the ECFNet blocks are built from
"""
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np

from ..autograd import Parameter, Tensor
from ..autograd import functional as F
from ..autograd.tensor import resolve_dtype
from ..errors import TapeError
from ..utils.seeding import substream

Size2 = Union[int, Tuple[int, int]]


def _param(shape: Tuple[int, ...], init: str, fan_in: int, dtype) -> Parameter:
    p = Parameter(np.zeros(shape), dtype=dtype)
    p.init_rule = init
    p.fan_in = fan_in
    return p


class Module:
    """Walks attributes to find parameters; names follow attribute paths"""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        """(path, parameter) pairs in attribute order"""
        for attr, value in vars(self).items():
            yield from _walk(value, f"{prefix}{attr}")

    def parameters_dict(self) -> Dict[str, Parameter]:
        """Parameters keyed by path; stamps each with its name"""
        params: Dict[str, Parameter] = {}
        seen = set()
        for name, p in self.named_parameters():
            if id(p) in seen:
                raise TapeError(f"parameter registered twice: {name}")
            seen.add(id(p))
            p.name = name
            params[name] = p
        return params

    def parameter_count(self) -> int:
        """Total number of scalar parameters"""
        return int(sum(p.size for _, p in self.named_parameters()))

    def zero_grad(self) -> None:
        """Clear every parameter gradient"""
        for _, p in self.named_parameters():
            p.zero_grad()

    def initialize(self, seed: int) -> None:
        """Kaiming-uniform (fan-in) for weights flagged so, zeros elsewhere.

        Each parameter draws from its own named substream, so modules shared
        between model variants start identical.
        """
        for name, p in self.parameters_dict().items():
            if getattr(p, "init_rule", "zeros") == "kaiming":
                bound = np.sqrt(6.0 / max(p.fan_in, 1))
                values = substream(seed, f"init:{name}").uniform(-bound, bound, size=p.shape)
            else:
                values = np.zeros(p.shape)
            p.assign(values)


def _walk(value, path: str) -> Iterator[Tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(f"{path}.")
    elif isinstance(value, (list, tuple)):
        for index, item in enumerate(value):
            yield from _walk(item, f"{path}.{index}")


class Conv2d(Module):
    """Grouped 2-D convolution with "same" padding by default"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: Size2 = 3,
                 stride: int = 1, padding: Optional[Size2] = None, groups: int = 1,
                 bias: bool = True, init: str = "kaiming", dtype=None):
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        dtype = resolve_dtype(dtype)
        self.stride = stride
        self.padding = (kh // 2, kw // 2) if padding is None else padding
        self.groups = groups
        fan_in = (in_channels // groups) * kh * kw
        self.weight = _param((out_channels, in_channels // groups, kh, kw), init, fan_in, dtype)
        self.bias = _param((out_channels,), "zeros", fan_in, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding, groups=self.groups)


class Linear(Module):
    """Token projection ``x @ W + b`` over the last axis"""

    def __init__(self, in_features: int, out_features: int, dtype=None):
        dtype = resolve_dtype(dtype)
        self.weight = _param((in_features, out_features), "kaiming", in_features, dtype)
        self.bias = _param((out_features,), "zeros", in_features, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return F.add(F.matmul(x, self.weight), self.bias)


class ConvBlock(Module):
    """conv3x3 -> ReLU -> conv3x3"""

    def __init__(self, in_channels: int, out_channels: int, dtype=None):
        self.conv1 = Conv2d(in_channels, out_channels, 3, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(F.relu(self.conv1(x)))


class ResidualBlock(Module):
    """x + ConvBlock(x)"""

    def __init__(self, channels: int, dtype=None):
        self.body = ConvBlock(channels, channels, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return F.add(x, self.body(x))


def run_blocks(blocks, x: Tensor) -> Tensor:
    """Apply blocks in order"""
    for block in blocks:
        x = block(x)
    return x
