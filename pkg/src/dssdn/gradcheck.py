"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import functional as F
from .network import DSSDBlock, build_network, tiny_config
from .nn import Conv2d, Linear, Module
from .operators import ECA, OrthonormalSeparableConv, SeparableConv, SeparablePartialConv, ortho_penalty
from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int
    rtol: float
    atol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.rtol


def scaled_error(analytic: np.ndarray, numeric: np.ndarray, rtol: float, atol: float) -> np.ndarray:
    """|a - n| / max(|n|, atol/rtol): at most rtol exactly when |a-n| <= max(rtol*|n|, atol)."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), atol / rtol)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-6,
                    rtol: float = 1e-4, atol: float = 1e-6, max_coords: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None, name: str = "") -> GradCheckResult:
    """Compare backward() against central differences for every tensor in ``tensors``.

    ``loss_fn`` must rebuild the graph from the current tensor values on each call.
    ``max_coords`` samples that many coordinates per tensor (all when None).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors:
        t.grad = None
    backward(loss_fn())
    worst, count = 0.0, 0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = float(scaled_error(analytic.reshape(-1)[i], numeric, rtol, atol))
            worst = max(worst, err)
            count += 1
        t.grad = None
    return GradCheckResult(name, worst, count, rtol, atol)


def _module_check(name: str, module: Module, x: np.ndarray, rng, max_coords=None, **kw) -> GradCheckResult:
    xt = Tensor(x, requires_grad=True)
    proj = rng.standard_normal(module(Tensor(x)).shape)

    def loss():
        return (module(xt) * proj).sum()

    return check_gradients(loss, [xt] + module.parameters(), rng=rng, max_coords=max_coords, name=name, **kw)


def run_suite(seed: int = 7, rtol: float = 1e-4, atol: float = 1e-6) -> List[GradCheckResult]:
    """Gradient checks over every layer kind plus a tiny end-to-end model (float64)."""
    rng = np.random.default_rng(seed)
    x = lambda *s: rng.standard_normal(s)  # noqa: E731
    results = [
        _module_check("conv2d", Conv2d(3, 4, (3, 3), rng=rng), x(2, 3, 5, 6), rng, atol=atol, rtol=rtol),
        _module_check("conv2d_depthwise", Conv2d(4, 4, (3, 1), groups=4, rng=rng), x(2, 4, 5, 6), rng, atol=atol, rtol=rtol),
        _module_check("conv2d_grouped_strided", Conv2d(4, 6, (3, 3), groups=2, stride=2, rng=rng), x(1, 4, 7, 6), rng,
                      atol=atol, rtol=rtol),
        _module_check("linear", Linear(5, 3, rng=rng), x(4, 5), rng, atol=atol, rtol=rtol),
        _module_check("SC", SeparableConv(3, 4, rng), x(2, 3, 5, 6), rng, atol=atol, rtol=rtol),
        _module_check("OSC", OrthonormalSeparableConv(4, 4, 2, rng=rng), x(2, 4, 5, 6), rng, atol=atol, rtol=rtol),
        _module_check("SPC", SeparablePartialConv(8, 6, 0.5, rng=rng), x(2, 8, 4, 5), rng, atol=atol, rtol=rtol),
        _module_check("ECA", ECA(6, 3, rng=rng), x(2, 6, 4, 5), rng, atol=atol, rtol=rtol),
    ]
    for kind in ("SC", "OSC", "SPC"):
        block = DSSDBlock(4, kind, depth=2, rng=rng, mid_ratio=0.5, spc_ratio=0.5)
        results.append(_module_check(f"DSSDB[{kind}]", block, x(2, 4, 5, 8), rng, max_coords=12, atol=atol, rtol=rtol))

    w = Tensor(x(3, 5), requires_grad=True)
    results.append(check_gradients(lambda: ortho_penalty(w), [w], name="ortho_penalty", rtol=rtol, atol=atol))

    logits = Tensor(x(4, 10), requires_grad=True)
    targets = rng.dirichlet(np.ones(10), size=4)
    results.append(check_gradients(lambda: F.softmax_cross_entropy(logits, targets), [logits],
                                   name="cross_entropy", rtol=rtol, atol=atol))

    for variant in ("large", "middle", "small"):
        model = build_network(tiny_config(variant, 4, block_pool=(2, 1)), seed=seed)
        inp = Tensor(x(1, 1, 16, 16))
        tgt = F.one_hot([3], 10)
        from .train import total_loss

        results.append(check_gradients(lambda: total_loss(model(inp), tgt, model, 1e-2), model.parameters(),
                                       max_coords=4, rng=rng, name=f"model[{variant}]", rtol=rtol, atol=atol))
    return results


def format_results(results: Sequence[GradCheckResult]) -> str:
    lines = [f"{'layer kind':<24} {'coords':>7} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<24} {r.checked:>7d} {r.max_rel_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def summary(results: Sequence[GradCheckResult]) -> Dict[str, float]:
    return {r.name: r.max_rel_error for r in results}
