"""Layer containers: parameters, module tree, call tracing."""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from . import functional as F
from .errors import ConfigurationError
from .tensor import Tensor, get_default_dtype

_CALL_HOOKS: List[Callable] = []


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype or get_default_dtype())


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> Parameter:
    """Fan-in scaled uniform init, bound sqrt(1/fan_in)."""
    bound = math.sqrt(1.0 / max(fan_in, 1))
    return Parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype)


@contextlib.contextmanager
def trace_calls(hook: Callable) -> Iterator[None]:
    """Call ``hook(module, inputs, output)`` after every module forward."""
    _CALL_HOOKS.append(hook)
    try:
        yield
    finally:
        _CALL_HOOKS.remove(hook)


class Module:
    """Base class; children and parameters are discovered from attributes."""

    def forward(self, *args):
        raise NotImplementedError

    def __call__(self, *args):
        out = self.forward(*args)
        for hook in _CALL_HOOKS:
            hook(self, args, out)
        return out

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def own_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield name, value

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for path, mod in self.named_modules(prefix):
            for name, p in mod.own_parameters():
                yield (f"{path}.{name}" if path else name), p

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Conv2d(Module):
    """Conv layer with bias and 'same' padding for odd kernels (stride 1)."""

    def __init__(self, c_in: int, c_out: int, kernel=(1, 1), groups: int = 1,
                 stride=1, padding=None, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        kh, kw = F._pair(kernel)
        if c_in < 1 or c_out < 1:
            raise ConfigurationError(f"channel counts must be positive, got {c_in}->{c_out}")
        if c_in % groups or c_out % groups:
            raise ConfigurationError(f"groups={groups} must divide channels {c_in}->{c_out}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.groups = c_in, c_out, groups
        self.kernel = (kh, kw)
        self.stride = F._pair(stride)
        self.padding = F._pair(padding) if padding is not None else (kh // 2, kw // 2)
        fan_in = (c_in // groups) * kh * kw
        self.weight = uniform_init(rng, (c_out, c_in // groups, kh, kw), fan_in, dtype)
        self.bias = uniform_init(rng, (c_out,), fan_in, dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)

    def __repr__(self):
        return f"Conv2d({self.c_in}, {self.c_out}, kernel={self.kernel}, groups={self.groups})"


def pointwise(c_in: int, c_out: int, rng=None, dtype=None) -> Conv2d:
    return Conv2d(c_in, c_out, (1, 1), rng=rng, dtype=dtype)


def depthwise(channels: int, kernel, rng=None, dtype=None) -> Conv2d:
    return Conv2d(channels, channels, kernel, groups=channels, rng=rng, dtype=dtype)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng=None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out = n_in, n_out
        self.weight = uniform_init(rng, (n_out, n_in), n_in, dtype)
        self.bias = uniform_init(rng, (n_out,), n_in, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)

    def __repr__(self):
        return f"Linear({self.n_in}, {self.n_out})"


class AvgPool(Module):
    def __init__(self, kernel):
        self.kernel = F._pair(kernel)

    def forward(self, x):
        return F.avg_pool2d(x, self.kernel)
