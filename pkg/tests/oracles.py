"""Naive reference implementations used as independent test oracles.

Everything here is written with explicit loops over plain numpy arrays and
shares no code with the package.
"""

from __future__ import annotations

import math

import numpy as np


class MacCounter:
    def __init__(self):
        self.macs = 0


def direct_conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0), groups=1, counter=None):
    """Direct convolution: for every output site, dot the weight with the padded window."""
    B, C, H, W = x.shape
    O, Cg, KH, KW = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.zeros((B, C, H + 2 * ph, W + 2 * pw), dtype=np.float64)
    xp[:, :, ph:ph + H, pw:pw + W] = x
    OH = (H + 2 * ph - KH) // sh + 1
    OW = (W + 2 * pw - KW) // sw + 1
    out = np.zeros((B, O, OH, OW))
    per_group_out = O // groups
    for n in range(B):
        for o in range(O):
            g = o // per_group_out
            chans = slice(g * Cg, (g + 1) * Cg)
            for i in range(OH):
                for j in range(OW):
                    win = xp[n, chans, i * sh:i * sh + KH, j * sw:j * sw + KW]
                    acc = 0.0
                    for c in range(Cg):
                        for ky in range(KH):
                            for kx in range(KW):
                                acc += w[o, c, ky, kx] * win[c, ky, kx]
                    if counter is not None:
                        counter.macs += Cg * KH * KW
                    out[n, o, i, j] = acc + (0.0 if b is None else b[o])
    return out


def fast_direct_conv2d(x, w, b=None, stride=(1, 1), padding=(0, 0), groups=1):
    """Same loop structure as :func:`direct_conv2d` but with the inner dot product vectorized."""
    B, C, H, W = x.shape
    O, Cg, KH, KW = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    OH = (H + 2 * ph - KH) // sh + 1
    OW = (W + 2 * pw - KW) // sw + 1
    out = np.zeros((B, O, OH, OW))
    per_group_out = O // groups
    for o in range(O):
        g = o // per_group_out
        xg = xp[:, g * Cg:(g + 1) * Cg]
        for i in range(OH):
            for j in range(OW):
                win = xg[:, :, i * sh:i * sh + KH, j * sw:j * sw + KW]
                out[:, o, i, j] = np.sum(win * w[o], axis=(1, 2, 3))
        if b is not None:
            out[:, o] += b[o]
    return out


def _w(layer):
    return layer.weight.data.astype(np.float64)


def _b(layer):
    return None if layer.bias is None else layer.bias.data.astype(np.float64)


def conv_layer(x, layer):
    return fast_direct_conv2d(x, _w(layer), _b(layer), layer.stride, layer.padding, layer.groups)


def sc(x, p_w, p_b, v_w, v_b, h_w, h_b):
    """Pointwise conv, then a 3x1 and a 1x3 depthwise conv on that result, summed."""
    c = p_w.shape[0]
    h = fast_direct_conv2d(x, p_w, p_b)
    return (fast_direct_conv2d(h, v_w, v_b, padding=(1, 0), groups=c)
            + fast_direct_conv2d(h, h_w, h_b, padding=(0, 1), groups=c))


def sc_layer(x, layer):
    return sc(x, _w(layer.p_1x1), _b(layer.p_1x1), _w(layer.s_3x1), _b(layer.s_3x1),
              _w(layer.s_1x3), _b(layer.s_1x3))


def osc_layer(x, layer):
    h = fast_direct_conv2d(x, _w(layer.m_1x1), _b(layer.m_1x1))
    h = fast_direct_conv2d(h, _w(layer.n_1x1), _b(layer.n_1x1))
    c = h.shape[1]
    return (fast_direct_conv2d(h, _w(layer.s_3x1), _b(layer.s_3x1), padding=(1, 0), groups=c)
            + fast_direct_conv2d(h, _w(layer.s_1x3), _b(layer.s_1x3), padding=(0, 1), groups=c))


def spc_layer(x, layer):
    k = layer.c_dim
    mixed = np.concatenate([sc_layer(x[:, :k], layer.inner), x[:, k:]], axis=1)
    return fast_direct_conv2d(mixed, _w(layer.p_1x1), _b(layer.p_1x1))


def eca_layer(x, layer):
    w = layer.weight.data.astype(np.float64)
    k = len(w)
    B, C = x.shape[:2]
    out = np.empty_like(x, dtype=np.float64)
    for n in range(B):
        desc = [x[n, c].mean() for c in range(C)]
        for c in range(C):
            s = 0.0
            for j in range(k):
                src = c + j - (k - 1) // 2
                if 0 <= src < C:
                    s += w[j] * desc[src]
            out[n, c] = x[n, c] / (1.0 + math.exp(-s))
    return out


def operator_layer(x, layer):
    kind = getattr(layer, "kind", None)
    if kind == "SC":
        return sc_layer(x, layer)
    if kind == "OSC":
        return osc_layer(x, layer)
    if kind == "SPC":
        return spc_layer(x, layer)
    return conv_layer(x, layer)


def dssdb_block(x, block, cut):
    low, high = x[..., :cut], x[..., cut:]
    for conv in block.low:
        low = np.maximum(conv_layer(low, conv), 0.0)
    for op in block.high:
        high = np.maximum(operator_layer(high, op), 0.0)
    y = np.concatenate([low, high], axis=3)
    if block.use_eca:
        y = eca_layer(y, block.eca)
    return y + x


def ortho_penalty(w):
    w = w.reshape(w.shape[0], -1)
    total = 0.0
    for i in range(w.shape[0]):
        for j in range(w.shape[0]):
            g = float(np.dot(w[i], w[j])) - (1.0 if i == j else 0.0)
            total += g * g
    return total


# -- DSP ------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def brute_force_power(samples, n_fft, hop):
    """Reflect-padded, periodic-Hann framed power spectrum via an explicit DFT sum."""
    pad = n_fft // 2
    x = np.pad(samples.astype(np.float64), pad, mode="reflect")
    n_frames = 1 + len(samples) // hop
    n = np.arange(n_fft)
    win = 0.5 - 0.5 * np.cos(2 * np.pi * n / n_fft)
    kk = np.arange(n_fft // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(kk, n) / n_fft)
    out = np.empty((n_frames, len(kk)))
    for t in range(n_frames):
        seg = x[t * hop:t * hop + n_fft] * win
        out[t] = np.abs(basis @ seg) ** 2
    return out


def triangle_weights_exact(n_fft, n_mels, sr):
    """Average HTK triangle height over each FFT bin's cell [(k-1/2)df, (k+1/2)df].

    The triangle is piecewise linear, so the trapezoid rule over the sorted
    breakpoints (cell ends plus the triangle's corners inside the cell) is exact.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sr / 2.0), n_mels + 2))
    df = sr / n_fft
    n_bins = n_fft // 2 + 1
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, peak, hi = edges[m], edges[m + 1], edges[m + 2]

        def tri(f):
            if f <= lo or f >= hi:
                return 0.0
            return (f - lo) / (peak - lo) if f <= peak else (hi - f) / (hi - peak)

        for k in range(n_bins):
            a, b = (k - 0.5) * df, (k + 0.5) * df
            if b <= lo or a >= hi:
                continue
            pts = sorted({a, b} | {p for p in (lo, peak, hi) if a < p < b})
            area = sum(0.5 * (tri(p) + tri(q)) * (q - p) for p, q in zip(pts[:-1], pts[1:]))
            fb[m, k] = area / df
    return fb
