"""Layer-by-layer parameter and multiply-accumulate accounting.

MACs are collected from an instrumented forward pass, so shared sub-results
(the SC pointwise stage feeding both depthwise branches) are counted exactly as
often as they are computed. One MAC is one multiply plus one add; bias,
activations, pooling and the ECA sigmoid cost nothing.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DimensionError
from .nn import Conv2d, Linear, Module, trace_calls
from .operators import ECA
from .tensor import Tensor, no_grad

REFERENCE_INPUT_SHAPE = (1, 1, 431, 256)


@dataclass
class LayerRow:
    path: str
    kind: str
    params: int
    macs: int
    output_shape: Tuple[int, ...]


@dataclass
class ComplexityReport:
    input_shape: Tuple[int, ...]
    rows: List[LayerRow] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "rows": [dict(asdict(r), output_shape=list(r.output_shape)) for r in self.rows],
            "totals": {"params": self.total_params, "macs": self.total_macs},
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def format_table(self) -> str:
        width = max([len(r.path) for r in self.rows] + [5])
        lines = [f"{'layer':<{width}}  {'kind':<10} {'params':>10} {'MACs':>14}  output"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            lines.append(f"{r.path:<{width}}  {r.kind:<10} {r.params:>10,d} {r.macs:>14,d}  {tuple(r.output_shape)}")
        lines.append("-" * len(lines[0]))
        lines.append(
            f"{'total':<{width}}  {'':<10} {self.total_params:>10,d} {self.total_macs:>14,d}"
            f"  ({format_count(self.total_params, 'M')} params, {format_count(self.total_macs, 'G')} MACs"
            f" at input {tuple(self.input_shape)})"
        )
        return "\n".join(lines)


def format_count(n: int, unit: str) -> str:
    scale = {"K": 1e3, "M": 1e6, "G": 1e9}[unit]
    return f"{n / scale:.3f}{unit}"


def conv_macs(in_shape: Sequence[int], out_shape: Sequence[int], conv: Conv2d) -> int:
    b, c_out, oh, ow = out_shape
    kh, kw = conv.kernel
    return int(b * oh * ow * c_out * (conv.c_in // conv.groups) * kh * kw)


def _layer_macs(module: Module, inputs, output: Tensor) -> int:
    if isinstance(module, Conv2d):
        return conv_macs(inputs[0].shape, output.shape, module)
    if isinstance(module, Linear):
        return int(inputs[0].shape[0] * module.n_in * module.n_out)
    if isinstance(module, ECA):
        b, c = inputs[0].shape[:2]
        return int(b * c * module.k)
    return 0


def _kind(module: Module) -> str:
    if isinstance(module, Conv2d):
        kh, kw = module.kernel
        if module.groups == module.c_in and module.groups > 1:
            return f"dw{kh}x{kw}"
        return f"conv{kh}x{kw}"
    return type(module).__name__.lower()


def report(model: Module, input_shape: Sequence[int]) -> ComplexityReport:
    """Run a recorded forward pass on zeros of ``input_shape``."""
    input_shape = tuple(int(v) for v in input_shape)
    if len(input_shape) != 4 or min(input_shape) < 1:
        raise DimensionError(f"input shape must be 4 positive ints (batch, 1, time, freq), got {input_shape}")
    paths = {id(m): p or "<model>" for p, m in model.named_modules()}
    seen = set()
    rep = ComplexityReport(input_shape)

    def hook(module, inputs, output):
        if not isinstance(module, (Conv2d, Linear, ECA)):
            return
        params = 0
        if id(module) not in seen:
            seen.add(id(module))
            params = sum(p.size for _, p in module.own_parameters())
        rep.rows.append(
            LayerRow(paths.get(id(module), "?"), _kind(module), params, _layer_macs(module, inputs, output), tuple(output.shape))
        )

    params = model.parameters()
    dtype = params[0].dtype if params else np.float64
    with no_grad(), trace_calls(hook):
        model(Tensor(np.zeros(input_shape, dtype=dtype)))
    return rep


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def count_macs(model: Module, input_shape: Sequence[int]) -> int:
    return report(model, input_shape).total_macs
