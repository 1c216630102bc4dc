"""Separable-convolution operators and efficient channel attention.

All operators preserve the (time, frequency) extent of their input and are
purely linear; the surrounding block decides where ReLU goes.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from . import functional as F
from .errors import ConfigurationError, DimensionError
from .nn import Conv2d, Module, depthwise, pointwise, uniform_init
from .tensor import Tensor, matmul, mul, reshape, sub, sum_all


def _check_channels(x: Tensor, expected: int, who: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{who}: expected (batch, channels, time, freq), got rank {x.ndim}")
    if x.shape[1] != expected:
        raise DimensionError(f"{who}: channel axis expects {expected}, got {x.shape[1]}")


class SeparableConv(Module):
    """Pointwise c_in -> c_out, then parallel 3x1 and 1x3 depthwise convs summed.

    The pointwise result is computed once and fed to both directions.
    """

    kind = "SC"

    def __init__(self, c_in: int, c_out: int, rng: Optional[np.random.Generator] = None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out = c_in, c_out
        self.p_1x1 = pointwise(c_in, c_out, rng, dtype)
        self.s_3x1 = depthwise(c_out, (3, 1), rng, dtype)
        self.s_1x3 = depthwise(c_out, (1, 3), rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.c_in, "SC")
        h = self.p_1x1(x)
        return self.s_3x1(h) + self.s_1x3(h)

    @staticmethod
    def param_count(c_in: int, c_out: int) -> int:
        return c_in * c_out + c_out + 2 * (3 * c_out + c_out)


def default_mid_channels(c_in: int, c_out: int) -> int:
    return max(1, min(c_in, c_out) // 2)


class OrthonormalSeparableConv(Module):
    """SC whose pointwise stage is factored c_in -> mid -> c_out.

    The first factor (``m_1x1``) is the one pulled toward orthonormal rows by
    :func:`ortho_penalty` during training.
    """

    kind = "OSC"

    def __init__(self, c_in: int, c_out: int, mid_channels: Optional[int] = None,
                 ortho_lambda: float = 1e-4, rng: Optional[np.random.Generator] = None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        mid = default_mid_channels(c_in, c_out) if mid_channels is None else int(mid_channels)
        if mid < 1:
            raise ConfigurationError(f"mid_channels must be >= 1, got {mid}")
        self.c_in, self.c_out, self.mid_channels = c_in, c_out, mid
        self.ortho_lambda = float(ortho_lambda)
        self.m_1x1 = pointwise(c_in, mid, rng, dtype)
        self.n_1x1 = pointwise(mid, c_out, rng, dtype)
        self.s_3x1 = depthwise(c_out, (3, 1), rng, dtype)
        self.s_1x3 = depthwise(c_out, (1, 3), rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.c_in, "OSC")
        h = self.n_1x1(self.m_1x1(x))
        return self.s_3x1(h) + self.s_1x3(h)

    def penalty(self) -> Tensor:
        return ortho_penalty(self.m_1x1.weight)

    @staticmethod
    def param_count(c_in: int, c_out: int, mid: int) -> int:
        return c_in * mid + mid + mid * c_out + c_out + 2 * (3 * c_out + c_out)


def ortho_penalty(weight: Tensor) -> Tensor:
    """Soft orthogonality ||W W^T - I||_F^2 with W viewed as (rows = output channels)."""
    rows = weight.shape[0]
    w = reshape(weight, (rows, weight.size // rows))
    gram = matmul(w, w.T)
    diff = sub(gram, np.eye(rows, dtype=weight.dtype))
    return sum_all(mul(diff, diff))


def touched_channels(c_in: int, ratio: float) -> int:
    if not 0.0 < ratio <= 1.0:
        raise ConfigurationError(f"touched fraction must be in (0, 1], got {ratio}")
    return max(1, int(math.floor(ratio * c_in + 0.5)))


class SeparablePartialConv(Module):
    """Run SC over the first c_dim channels, pass the rest through, fuse with a pointwise conv."""

    kind = "SPC"

    def __init__(self, c_in: int, c_out: int, ratio: float = 0.25, c_dim: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        c_dim = touched_channels(c_in, ratio) if c_dim is None else int(c_dim)
        if not 1 <= c_dim <= c_in:
            raise ConfigurationError(f"c_dim={c_dim} must be in [1, c_in={c_in}]")
        self.c_in, self.c_out, self.c_dim = c_in, c_out, c_dim
        self.c_untouched = c_in - c_dim
        self.inner = SeparableConv(c_dim, c_dim, rng, dtype)
        self.p_1x1 = pointwise(c_in, c_out, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.c_in, "SPC")
        if self.c_untouched == 0:
            return self.p_1x1(self.inner(x))
        touched, untouched = F.split_channels(x, self.c_dim)
        return self.p_1x1(F.concat_channels(self.inner(touched), untouched))

    @staticmethod
    def param_count(c_in: int, c_out: int, c_dim: int) -> int:
        return (c_dim * c_dim + c_dim + 8 * c_dim) + (c_in * c_out + c_out)


def eca_kernel_size(channels: int, gamma: float = 2.0, b: float = 1.0) -> int:
    t = int(abs(math.log2(channels) / gamma + b / gamma))
    k = t if t % 2 else t + 1
    return max(3, k)


class ECA(Module):
    """Channel attention: pooled descriptors -> 1-D conv over channels -> sigmoid gate."""

    kind = "ECA"

    def __init__(self, channels: int, k: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        k = eca_kernel_size(channels) if k is None else int(k)
        if k < 1 or k % 2 == 0:
            raise ConfigurationError(f"ECA kernel size must be odd and positive, got {k}")
        if k > 2 * channels - 1:
            raise ConfigurationError(f"ECA kernel size {k} exceeds the channel support 2*{channels}-1")
        self.channels, self.k = channels, k
        self.weight = uniform_init(rng, (k,), k, dtype)

    def gates(self, x: Tensor) -> Tensor:
        B, C = x.shape[0], x.shape[1]
        d = reshape(F.global_avg_pool(x), (B, 1, 1, C))
        kernel = reshape(self.weight, (1, 1, 1, self.k))
        a = F.conv2d(d, kernel, None, 1, (0, (self.k - 1) // 2))
        return reshape(F.sigmoid(a), (B, C, 1, 1))

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.channels, "ECA")
        return self.gates(x) * x


def make_operator(kind: str, c_in: int, c_out: int, rng, dtype=None, *,
                  mid_ratio: Optional[float] = None, spc_ratio: float = 0.25,
                  ortho_lambda: float = 1e-4) -> Module:
    """Factory for the high-band operator of a block."""
    kind = kind.upper()
    if kind == "SC":
        return SeparableConv(c_in, c_out, rng, dtype)
    if kind == "OSC":
        mid = None if mid_ratio is None else max(1, int(min(c_in, c_out) * mid_ratio))
        return OrthonormalSeparableConv(c_in, c_out, mid, ortho_lambda, rng, dtype)
    if kind == "SPC":
        return SeparablePartialConv(c_in, c_out, spc_ratio, rng=rng, dtype=dtype)
    if kind == "CONV3X3":
        return Conv2d(c_in, c_out, (3, 3), rng=rng, dtype=dtype)
    raise ConfigurationError(f"unknown operator kind {kind!r}")
