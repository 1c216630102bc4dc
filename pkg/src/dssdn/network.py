"""Frequency-split distillation block and the five-block DSSDN backbone."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .errors import ConfigurationError, DimensionError
from .nn import Conv2d, Linear, Module, pointwise
from .operators import ECA, OrthonormalSeparableConv, make_operator
from .tensor import Tensor, relu

VARIANT_OPERATOR = {
    "large": "SC",
    "middle": "SPC",
    "small": "OSC",
    "dl-o": "CONV3X3",
    "dl-b": None,
}


def normalize_variant(name: str) -> str:
    key = str(name).strip().lower().replace("_", "-")
    key = {"dssdn-large": "large", "dssdn-middle": "middle", "dssdn-small": "small", "dlo": "dl-o", "dlb": "dl-b"}.get(key, key)
    if key not in VARIANT_OPERATOR:
        raise ConfigurationError(f"unknown variant {name!r}; choose from {sorted(VARIANT_OPERATOR)}")
    return key


@dataclass
class NetworkConfig:
    variant: str = "large"
    n_blocks: int = 5
    stage_channels: List[int] = field(default_factory=lambda: [56] * 5)
    split_ratio: float = 0.5
    distill_depth: int = 3
    n_classes: int = 10
    stem_pool: Tuple[int, int] = (1, 2)
    block_pool: Tuple[int, int] = (2, 2)
    osc_mid_ratio: float = 0.25
    spc_ratio: float = 0.25
    fusion: bool = True

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        self.stage_channels = [int(c) for c in self.stage_channels]
        self.stem_pool = tuple(int(v) for v in self.stem_pool)
        self.block_pool = tuple(int(v) for v in self.block_pool)
        self.validate()

    def validate(self) -> None:
        if self.n_blocks < 1:
            raise ConfigurationError("n_blocks must be >= 1")
        if len(self.stage_channels) != self.n_blocks:
            raise ConfigurationError(
                f"stage_channels has {len(self.stage_channels)} entries, expected n_blocks={self.n_blocks}"
            )
        if any(c < 1 for c in self.stage_channels):
            raise ConfigurationError("stage_channels must be positive")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigurationError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.distill_depth < 1:
            raise ConfigurationError("distill_depth must be >= 1")
        if self.n_classes < 2:
            raise ConfigurationError("n_classes must be >= 2")
        if min(self.stem_pool) < 1 or min(self.block_pool) < 1 or len(self.stem_pool) != 2 or len(self.block_pool) != 2:
            raise ConfigurationError("pool kernels must be pairs of positive ints")
        if not 0.0 < self.osc_mid_ratio <= 1.0 or not 0.0 < self.spc_ratio <= 1.0:
            raise ConfigurationError("osc_mid_ratio and spc_ratio must be in (0, 1]")

    @property
    def operator(self) -> Optional[str]:
        return VARIANT_OPERATOR[self.variant]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stem_pool"] = list(self.stem_pool)
        d["block_pool"] = list(self.block_pool)
        return d

    def digest(self) -> int:
        """Stable 64-bit fingerprint of the architecture."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")

    def output_grid(self, time: int, freq: int) -> Tuple[int, int]:
        t, f = time // self.stem_pool[0], freq // self.stem_pool[1]
        for _ in range(self.n_blocks - 1):
            t, f = t // self.block_pool[0], f // self.block_pool[1]
        return t, f


def split_point(freq: int, ratio: float) -> int:
    return min(freq - 1, max(1, int(round(freq * ratio))))


class DSSDBlock(Module):
    """Cut the frequency axis, distill the low band with 1x1 convs, concentrate
    the high band with a separable operator, re-splice, gate with ECA, add the
    block input back."""

    def __init__(self, channels: int, operator: str, depth: int = 3, split_ratio: float = 0.5,
                 split_index: Optional[int] = None, use_eca: bool = True,
                 rng: Optional[np.random.Generator] = None, dtype=None, **op_kwargs):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.operator_kind = operator
        self.split_ratio = split_ratio
        self.split_index = split_index
        self.use_eca = use_eca
        self.low = [pointwise(channels, channels, rng, dtype) for _ in range(depth)]
        self.high = [make_operator(operator, channels, channels, rng, dtype, **op_kwargs) for _ in range(depth)]
        self.eca = ECA(channels, rng=rng, dtype=dtype)

    def cut(self, freq: int) -> int:
        if freq < 2:
            raise DimensionError(f"frequency axis: block needs at least 2 bins to split, got {freq}")
        if self.split_index is None:
            return split_point(freq, self.split_ratio)
        if not 0 < self.split_index < freq:
            raise ConfigurationError(f"split_index {self.split_index} outside (0, {freq})")
        return self.split_index

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(f"channel axis: block expects {self.channels} channels, got shape {x.shape}")
        low, high = F.split_frequency(x, self.cut(x.shape[3]))
        for conv in self.low:
            low = relu(conv(low))
        for op in self.high:
            high = relu(op(high))
        y = F.concat_frequency(low, high)
        if self.use_eca:
            y = self.eca(y)
        return F.add_maps(y, x)


class PlainBlock(Module):
    """Ablation stand-in for a whole block: one full 3x3 conv + ReLU."""

    def __init__(self, channels: int, rng=None, dtype=None):
        self.channels = channels
        self.conv = Conv2d(channels, channels, (3, 3), rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return relu(self.conv(x))


class DSSDN(Module):
    """Stem, cascaded blocks, multi-scale channel concatenation, classifier head."""

    def __init__(self, config: NetworkConfig, rng: np.random.Generator, dtype=None):
        self.config = config
        widths = config.stage_channels
        self.stem = pointwise(1, widths[0], rng, dtype)
        self.transitions = [None] + [
            pointwise(widths[i - 1], widths[i], rng, dtype) if widths[i] != widths[i - 1] else None
            for i in range(1, config.n_blocks)
        ]
        op_kwargs = dict(mid_ratio=config.osc_mid_ratio, spc_ratio=config.spc_ratio)
        if config.variant == "dl-b":
            self.blocks = [PlainBlock(c, rng, dtype) for c in widths]
        else:
            self.blocks = [
                DSSDBlock(c, config.operator, config.distill_depth, config.split_ratio, rng=rng, dtype=dtype, **op_kwargs)
                for c in widths
            ]
        fused = sum(widths) if config.fusion else widths[-1]
        self.head_eca = ECA(fused, rng=rng, dtype=dtype)
        self.classifier = Linear(fused, config.n_classes, rng, dtype)

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4:
            raise DimensionError(f"model input must be (batch, 1, time, freq), got rank {x.ndim}")
        if x.shape[1] != 1:
            raise DimensionError(f"channel axis: model input must have 1 channel, got {x.shape[1]}")
        t, f = self.config.output_grid(x.shape[2], x.shape[3])
        if t < 1:
            raise DimensionError(f"time axis: {x.shape[2]} frames too short for the pooling schedule")
        min_f = 1 if self.config.variant == "dl-b" else 2
        if f < min_f:
            raise DimensionError(f"frequency axis: {x.shape[3]} bins too few for the pooling schedule")

    def features(self, x: Tensor) -> List[Tensor]:
        """Outputs of every block, in cascade order."""
        self.check_input(x)
        h = F.avg_pool2d(self.stem(x), self.config.stem_pool)
        outs = []
        for i, block in enumerate(self.blocks):
            if i > 0:
                h = F.avg_pool2d(h, self.config.block_pool)
                if self.transitions[i] is not None:
                    h = self.transitions[i](h)
            h = block(h)
            outs.append(h)
        return outs

    def head(self, outs: Sequence[Tensor]) -> Tensor:
        if self.config.fusion:
            grid = outs[-1].shape[2:]
            fused = F.concat_channels(*[F.adaptive_avg_pool2d(o, grid) for o in outs])
        else:
            fused = outs[-1]
        return self.classifier(F.global_avg_pool(self.head_eca(fused)))

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))

    def osc_layers(self) -> List[OrthonormalSeparableConv]:
        return [m for _, m in self.named_modules() if isinstance(m, OrthonormalSeparableConv)]


def build_network(config: NetworkConfig, seed: int = 0, dtype=None) -> DSSDN:
    """Construct a model with deterministic, seeded parameter initialization."""
    if not isinstance(config, NetworkConfig):
        raise ConfigurationError("build_network expects a NetworkConfig")
    config.validate()
    return DSSDN(config, np.random.default_rng(seed), dtype)


def tiny_config(variant: str = "small", channels: int = 8, **overrides) -> NetworkConfig:
    """Desk-scale configuration used by tests and the synthetic toy set."""
    kw = dict(
        variant=variant,
        stage_channels=[channels] * 5,
        stem_pool=(1, 1),
        block_pool=(2, 2),
        osc_mid_ratio=0.5,
    )
    kw.update(overrides)
    return NetworkConfig(**kw)
