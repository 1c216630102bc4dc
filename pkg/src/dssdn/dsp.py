"""WAV loading, log-mel spectrograms and the binary spectrogram cache.

Framing is centred with reflect padding and a periodic Hann window, so a clip of
``n`` samples yields ``1 + n // hop`` frames: 431 for ten seconds at 44.1 kHz
with hop 1024. The mel filterbank uses the HTK mel scale with band edges from
0 Hz to Nyquist; each filter weight is the triangle averaged over the FFT bin's
frequency cell, which keeps the narrow low-frequency filters non-empty at
n_fft=2048 / 256 bands.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import CacheCorruptError, ConfigurationError, UnsupportedFormatError, ValidationError, WavParseError

CACHE_MAGIC = b"DSSD"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sBII")


@dataclass(frozen=True)
class SpectrogramConfig:
    n_fft: int = 2048
    hop: int = 1024
    n_mels: int = 256
    sample_rate: int = 44100
    log_floor: float = 1e-10
    normalize: bool = False

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ConfigurationError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 1 <= self.hop <= self.n_fft:
            raise ConfigurationError(f"hop must be in [1, n_fft], got {self.hop}")
        if not 1 <= self.n_mels <= self.n_fft // 2 + 1:
            raise ConfigurationError(f"n_mels must be in [1, n_fft/2+1], got {self.n_mels}")
        if self.sample_rate <= 0 or self.log_floor <= 0:
            raise ConfigurationError("sample_rate and log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise ValidationError("audio clip is empty")


# -- WAV I/O -------------------------------------------------------------

def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM or 32-bit float RIFF/WAVE file; stereo is averaged to mono."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavParseError(f"{path}: not a RIFF/WAVE file")
    riff_size = struct.unpack_from("<I", blob, 4)[0]
    if riff_size + 8 != len(blob):
        raise WavParseError(f"{path}: RIFF chunk size {riff_size} disagrees with file length {len(blob)}")

    fmt = None
    data = None
    pos = 12
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise WavParseError(f"{path}: truncated chunk header at byte {pos}")
        cid, size = struct.unpack_from("<4sI", blob, pos)
        body = pos + 8
        if body + size > len(blob):
            raise WavParseError(f"{path}: chunk {cid!r} claims {size} bytes, only {len(blob) - body} remain")
        if cid == b"fmt ":
            if size < 16:
                raise WavParseError(f"{path}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", blob, body)
        elif cid == b"data":
            data = blob[body:body + size]
        pos = body + size + (size & 1)
    if fmt is None or data is None:
        raise WavParseError(f"{path}: missing {'fmt' if fmt is None else 'data'} chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise WavParseError(f"{path}: invalid channel count or sample rate")
    if tag == 1 and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif tag == 3 and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormatError(f"{path}: format tag {tag} with {bits} bits per sample is not supported")
    if block_align != channels * dtype.itemsize or len(data) % block_align:
        raise WavParseError(f"{path}: data size {len(data)} is not a whole number of frames")
    frames = np.frombuffer(data, dtype=dtype).reshape(-1, channels).astype(np.float64) / scale
    if frames.shape[0] == 0:
        raise WavParseError(f"{path}: no audio frames")
    return AudioClip(frames.mean(axis=1), rate)


def write_wav(path, samples: np.ndarray, sample_rate: int, float32: bool = False) -> None:
    """Write mono samples in [-1, 1] as 16-bit PCM (or 32-bit float)."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if float32:
        payload, tag, bits = samples.astype("<f4").tobytes(), 3, 32
    else:
        pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
        payload, tag, bits = pcm.tobytes(), 1, 16
    align = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, sample_rate, sample_rate * align, align, bits)
    pad = b"\x00" if len(payload) & 1 else b""
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(payload)) + payload + pad
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


# -- spectral analysis ---------------------------------------------------

def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, hop: int) -> int:
    return 1 + n_samples // hop


def frames(samples: np.ndarray, config: SpectrogramConfig) -> np.ndarray:
    half = config.n_fft // 2
    samples = np.asarray(samples, dtype=np.float64)
    mode = "reflect" if samples.size > 1 else "edge"
    padded = np.pad(samples, half, mode=mode)
    n = frame_count(samples.size, config.hop)
    idx = np.arange(config.n_fft)[None, :] + config.hop * np.arange(n)[:, None]
    return padded[idx]


def stft_power(clip: AudioClip, config: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """|FFT(window * frame)|^2 for non-negative frequencies, shape (frames, n_fft/2+1)."""
    spec = np.fft.rfft(frames(clip.samples, config) * hann_window(config.n_fft), axis=1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(config: SpectrogramConfig) -> np.ndarray:
    return mel_to_hz(np.linspace(0.0, hz_to_mel(config.sample_rate / 2.0), config.n_mels + 2))


def _ramp_integral(f: np.ndarray, lo: float, peak: float, hi: float) -> np.ndarray:
    """Antiderivative of the unit-height triangle on [lo, hi] with apex at peak."""
    f = np.clip(f, lo, hi)
    rise = np.minimum(f, peak) - lo
    left = rise ** 2 / (2.0 * (peak - lo))
    fall = np.maximum(f - peak, 0.0)
    right = (fall * (hi - peak) - fall ** 2 / 2.0) / (hi - peak)
    return left + right


def mel_filterbank(config: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft/2+1)."""
    edges = mel_band_edges(config)
    df = config.sample_rate / config.n_fft
    centers = np.arange(config.n_bins) * df
    lo_cell, hi_cell = centers - df / 2.0, centers + df / 2.0
    fb = np.empty((config.n_mels, config.n_bins))
    for m in range(config.n_mels):
        lo, peak, hi = edges[m], edges[m + 1], edges[m + 2]
        fb[m] = (_ramp_integral(hi_cell, lo, peak, hi) - _ramp_integral(lo_cell, lo, peak, hi)) / df
    empty = np.flatnonzero(fb.max(axis=1) <= 0.0)
    if empty.size:
        raise ConfigurationError(f"mel filters {empty.tolist()[:5]} are empty at n_fft={config.n_fft}")
    return fb


def log_mel(clip: AudioClip, config: SpectrogramConfig = SpectrogramConfig(), fb: np.ndarray = None) -> np.ndarray:
    """Natural-log mel spectrogram, shape (time_frames, n_mels)."""
    if clip.sample_rate != config.sample_rate:
        raise ValidationError(f"clip sample rate {clip.sample_rate} != configured {config.sample_rate} (no resampling)")
    fb = mel_filterbank(config) if fb is None else fb
    out = np.log(stft_power(clip, config) @ fb.T + config.log_floor)
    if config.normalize:
        out = (out - out.mean()) / (out.std() + 1e-8)
    return out


# -- cache ---------------------------------------------------------------

def cache_write(path, spectrogram: np.ndarray) -> None:
    spec = np.asarray(spectrogram)
    if spec.ndim != 2 or spec.size == 0:
        raise ValidationError(f"cache expects a non-empty (time, mels) array, got shape {spec.shape}")
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, spec.shape[0], spec.shape[1])
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(spec, dtype="<f4").tobytes())
    os.replace(tmp, path)


def cache_read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CACHE_HEADER.size:
        raise CacheCorruptError(f"{path}: truncated header")
    magic, version, t, m = _CACHE_HEADER.unpack_from(blob)
    if magic != CACHE_MAGIC:
        raise CacheCorruptError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CacheCorruptError(f"{path}: unsupported cache version {version}")
    if t == 0 or m == 0:
        raise CacheCorruptError(f"{path}: zero-length payload")
    expected = _CACHE_HEADER.size + 4 * t * m
    if len(blob) != expected:
        raise CacheCorruptError(f"{path}: payload is {len(blob) - _CACHE_HEADER.size} bytes, expected {4 * t * m}")
    return np.frombuffer(blob, dtype="<f4", offset=_CACHE_HEADER.size).reshape(t, m).astype(np.float32)


def cache_shape(path) -> Tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(_CACHE_HEADER.size)
    if len(head) < _CACHE_HEADER.size or head[:4] != CACHE_MAGIC:
        raise CacheCorruptError(f"{path}: bad header")
    return _CACHE_HEADER.unpack(head)[2:]
