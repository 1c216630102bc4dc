"""Differentiable feature-map operations on (batch, channels, time, frequency) tensors."""

from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, DimensionError, ValidationError
from .tensor import Tensor, add, as_tensor, make_result, relu, sigmoid  # noqa: F401

IntPair = Union[int, Tuple[int, int]]

TIME_AXIS = 2
FREQ_AXIS = 3
CHANNEL_AXIS = 1


def _pair(v: IntPair) -> Tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def conv_output_size(n: int, k: int, pad: int, stride: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _contract_forward(win: np.ndarray, w: np.ndarray) -> np.ndarray:
    """win (B, G, cg, OH, OW) x w (G, og, cg) -> (B, G, og, OH, OW)."""
    B, G, cg, OH, OW = win.shape
    og = w.shape[1]
    if cg == 1 and og == 1:
        return win * w.reshape(1, G, 1, 1, 1)
    if G == 1:
        flat = win.reshape(B, cg, OH * OW)
        return np.matmul(w[0], flat).reshape(B, 1, og, OH, OW)
    return np.einsum("goi,bgihw->bgohw", w, win, optimize=True)


def _contract_weight_grad(gout: np.ndarray, win: np.ndarray) -> np.ndarray:
    """gout (B, G, og, OH, OW), win (B, G, cg, OH, OW) -> (G, og, cg)."""
    B, G, og, OH, OW = gout.shape
    cg = win.shape[2]
    if cg == 1 and og == 1:
        return (gout * win).sum(axis=(0, 3, 4)).reshape(G, 1, 1)
    if G == 1:
        go = gout.reshape(B, og, OH * OW)
        wi = win.reshape(B, cg, OH * OW)
        return np.matmul(go, wi.transpose(0, 2, 1)).sum(axis=0).reshape(1, og, cg)
    return np.einsum("bgohw,bgihw->goi", gout, win, optimize=True)


def _contract_input_grad(gout: np.ndarray, w: np.ndarray) -> np.ndarray:
    """gout (B, G, og, OH, OW) x w (G, og, cg) -> (B, G, cg, OH, OW)."""
    B, G, og, OH, OW = gout.shape
    cg = w.shape[2]
    if cg == 1 and og == 1:
        return gout * w.reshape(1, G, 1, 1, 1)
    if G == 1:
        go = gout.reshape(B, og, OH * OW)
        return np.matmul(w[0].T, go).reshape(B, 1, cg, OH, OW)
    return np.einsum("goi,bgohw->bgihw", w, gout, optimize=True)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: IntPair = 1,
    padding: IntPair = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` has shape (c_out, c_in/groups, kh, kw). Each kernel tap is handled
    as one batched contraction, so the cost is kh*kw matrix products rather than
    an explicit sliding-window loop.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be rank 4 (batch, channels, time, freq), got rank {x.ndim}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be rank 4, got rank {weight.ndim}")
    if groups < 1 or sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ConfigurationError(f"invalid conv2d settings stride={stride} padding={padding} groups={groups}")
    B, C, H, W = x.shape
    O, cg, kh, kw = weight.shape
    if C % groups != 0:
        raise ConfigurationError(f"groups={groups} does not divide input channels {C}")
    if O % groups != 0:
        raise ConfigurationError(f"groups={groups} does not divide output channels {O}")
    if cg != C // groups:
        raise DimensionError(f"channel axis: weight expects {cg * groups} input channels, got {C}")
    if H + 2 * ph < kh:
        raise DimensionError(f"time axis: kernel {kh} larger than padded input {H + 2 * ph}")
    if W + 2 * pw < kw:
        raise DimensionError(f"frequency axis: kernel {kw} larger than padded input {W + 2 * pw}")
    if bias is not None and bias.shape != (O,):
        raise DimensionError(f"bias shape {bias.shape} != ({O},)")

    G, og = groups, O // groups
    OH = conv_output_size(H, kh, ph, sh)
    OW = conv_output_size(W, kw, pw, sw)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    xg = xp.reshape(B, G, cg, Hp, Wp)
    wg = weight.data.reshape(G, og, cg, kh, kw)

    def window(dy: int, dx: int) -> np.ndarray:
        return xg[:, :, :, dy:dy + sh * (OH - 1) + 1:sh, dx:dx + sw * (OW - 1) + 1:sw]

    out = np.zeros((B, G, og, OH, OW), dtype=np.result_type(x.data, weight.data))
    for dy in range(kh):
        for dx in range(kw):
            out += _contract_forward(window(dy, dx), np.ascontiguousarray(wg[:, :, :, dy, dx]))
    out = out.reshape(B, O, OH, OW)
    if bias is not None:
        out += bias.data.reshape(1, O, 1, 1)

    def _bw(g):
        g5 = g.reshape(B, G, og, OH, OW)
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros((B, G, cg, Hp, Wp), dtype=out.dtype)
            for dy in range(kh):
                for dx in range(kw):
                    gxp[:, :, :, dy:dy + sh * (OH - 1) + 1:sh, dx:dx + sw * (OW - 1) + 1:sw] += _contract_input_grad(
                        g5, np.ascontiguousarray(wg[:, :, :, dy, dx])
                    )
            gx = gxp.reshape(B, C, Hp, Wp)[:, :, ph:ph + H, pw:pw + W]
            gx = np.ascontiguousarray(gx)
        if weight.requires_grad:
            gw5 = np.empty((G, og, cg, kh, kw), dtype=out.dtype)
            for dy in range(kh):
                for dx in range(kw):
                    gw5[:, :, :, dy, dx] = _contract_weight_grad(g5, window(dy, dx))
            gw = gw5.reshape(O, cg, kh, kw)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _bw, "conv2d")


# -- concatenation and slicing -------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise DimensionError("concat of an empty sequence")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref):
            raise DimensionError(f"concat rank mismatch: {t.ndim} vs {len(ref)}")
        for ax, (a, b) in enumerate(zip(ref, t.shape)):
            if ax != axis and a != b:
                raise DimensionError(f"concat along axis {axis}: axis {ax} differs ({a} vs {b})")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def _bw(g):
        return tuple(
            np.ascontiguousarray(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis))
            for i in range(len(tensors))
        )

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _bw, "concat")


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    n = x.shape[axis]
    if not (0 <= start < stop <= n):
        raise DimensionError(f"slice [{start}:{stop}) outside axis {axis} of length {n}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def _bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return make_result(np.ascontiguousarray(x.data[idx]), (x,), _bw, "slice")


def split(x: Tensor, index: int, axis: int) -> Tuple[Tensor, Tensor]:
    n = x.shape[axis]
    if not (0 < index < n):
        raise DimensionError(f"split point {index} not strictly inside axis {axis} of length {n}")
    return slice_axis(x, 0, index, axis), slice_axis(x, index, n, axis)


def split_frequency(x: Tensor, index: int) -> Tuple[Tensor, Tensor]:
    return split(x, index, FREQ_AXIS)


def split_channels(x: Tensor, index: int) -> Tuple[Tensor, Tensor]:
    return split(x, index, CHANNEL_AXIS)


def concat_frequency(a: Tensor, b: Tensor) -> Tensor:
    return concat([a, b], FREQ_AXIS)


def add_maps(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two feature maps of identical shape (no broadcasting)."""
    if a.shape != b.shape:
        raise DimensionError(f"add: feature maps differ in shape, {a.shape} vs {b.shape}")
    return add(a, b)


def concat_channels(*tensors: Tensor) -> Tensor:
    return concat(list(tensors), CHANNEL_AXIS)


# -- pooling -------------------------------------------------------------

def avg_pool_matrix(n_in: int, n_out: int, adaptive: bool, kernel: int = 1) -> np.ndarray:
    """Row i averages the input positions pooled into output position i."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        if adaptive:
            lo = (i * n_in) // n_out
            hi = -((-(i + 1) * n_in) // n_out)
        else:
            lo, hi = i * kernel, (i + 1) * kernel
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def pool2d_linear(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """out[b, c] = rows @ x[b, c] @ cols.T, for fixed pooling matrices."""
    if x.ndim != 4:
        raise DimensionError(f"pooling expects rank 4, got rank {x.ndim}")
    if rows.shape[1] != x.shape[2]:
        raise DimensionError(f"time axis: pooling expects {rows.shape[1]}, got {x.shape[2]}")
    if cols.shape[1] != x.shape[3]:
        raise DimensionError(f"frequency axis: pooling expects {cols.shape[1]}, got {x.shape[3]}")
    r = rows.astype(x.dtype)
    c = cols.astype(x.dtype)
    out = np.matmul(np.matmul(r, x.data), c.T)
    return make_result(out, (x,), lambda g: (np.matmul(np.matmul(r.T, g), c),), "pool2d")


def avg_pool2d(x: Tensor, kernel: IntPair) -> Tensor:
    """Non-overlapping average pooling (stride = kernel, trailing remainder dropped)."""
    kt, kf = _pair(kernel)
    if (kt, kf) == (1, 1):
        return x
    T, F = x.shape[2], x.shape[3]
    if T < kt:
        raise DimensionError(f"time axis: length {T} shorter than pooling kernel {kt}")
    if F < kf:
        raise DimensionError(f"frequency axis: length {F} shorter than pooling kernel {kf}")
    return pool2d_linear(x, avg_pool_matrix(T, T // kt, False, kt), avg_pool_matrix(F, F // kf, False, kf))


def adaptive_avg_pool2d(x: Tensor, size: Tuple[int, int]) -> Tensor:
    T, F = x.shape[2], x.shape[3]
    if tuple(size) == (T, F):
        return x
    return pool2d_linear(x, avg_pool_matrix(T, size[0], True), avg_pool_matrix(F, size[1], True))


def global_avg_pool(x: Tensor) -> Tensor:
    """(b, c, t, f) -> (b, c)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects rank 4, got rank {x.ndim}")
    B, C, T, F = x.shape
    n = T * F

    def _bw(g):
        return (np.broadcast_to((g / n)[:, :, None, None], (B, C, T, F)).copy(),)

    return make_result(x.data.mean(axis=(2, 3)), (x,), _bw, "global_avg_pool")


# -- dense head and loss -------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x (b, in) @ weight(out, in).T + bias."""
    if x.ndim != 2:
        raise DimensionError(f"linear expects (batch, features), got rank {x.ndim}")
    if weight.shape[1] != x.shape[1]:
        raise DimensionError(f"feature axis: linear expects {weight.shape[1]}, got {x.shape[1]}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def _bw(g):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ wd, g.T @ xd, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _bw, "linear")


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -sum(target * log softmax(logits)).

    ``targets`` are probability rows (one-hot or MixUp soft labels).
    """
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be (batch, classes), got rank {logits.ndim}")
    if t.shape != logits.shape:
        raise DimensionError(f"targets shape {t.shape} != logits shape {logits.shape}")
    if np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0, atol=1e-5, rtol=0):
        raise ValidationError("target rows must be non-negative and sum to 1 within 1e-5")
    t = t.astype(logits.dtype)
    B = logits.shape[0]
    lsm = log_softmax(logits.data)
    loss = np.asarray(-(t * lsm).sum() / B, dtype=logits.dtype)

    def _bw(g):
        p = np.exp(lsm)
        return ((p * t.sum(axis=1, keepdims=True) - t) * (g / B),)

    return make_result(loss, (logits,), _bw, "cross_entropy")


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def as_feature_map(x) -> Tensor:
    t = as_tensor(x)
    if t.ndim != 4:
        raise DimensionError(f"feature maps are (batch, channels, time, freq); got rank {t.ndim}")
    return t
