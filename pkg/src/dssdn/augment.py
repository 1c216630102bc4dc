"""Spectrogram-domain augmentation: MixUp, SpecAugment, device spectrum correction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DimensionError, ValidationError


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 0.4
    enabled: bool = True
    late_probability: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigurationError(f"mixup alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.late_probability <= 1.0:
            raise ConfigurationError("late_probability must be in [0, 1]")

    def probability(self, epoch: int, total_epochs: int) -> float:
        """Every batch during the first half of training, ``late_probability`` after."""
        if not self.enabled:
            return 0.0
        return 1.0 if 2 * epoch < total_epochs else self.late_probability


@dataclass(frozen=True)
class SpecAugmentConfig:
    n_time_masks: int = 2
    n_freq_masks: int = 2
    max_mask_width: int = 2
    enabled: bool = True

    def __post_init__(self):
        if min(self.n_time_masks, self.n_freq_masks, self.max_mask_width) < 0:
            raise ConfigurationError("SpecAugment counts and widths must be >= 0")


def mixup(x_i: np.ndarray, x_j: np.ndarray, y_i: np.ndarray, y_j: np.ndarray,
          rng: Optional[np.random.Generator] = None, alpha: float = 0.4,
          lam: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Convex combination of two samples and their label distributions.

    ``lam`` overrides the Beta(alpha, alpha) draw.
    """
    x_i, x_j = np.asarray(x_i), np.asarray(x_j)
    y_i, y_j = np.asarray(y_i, dtype=np.float64), np.asarray(y_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise DimensionError(f"mixup inputs differ in shape: {x_i.shape} vs {x_j.shape}")
    if y_i.shape != y_j.shape:
        raise DimensionError(f"mixup labels differ in shape: {y_i.shape} vs {y_j.shape}")
    if lam is None:
        if rng is None:
            raise ValidationError("mixup needs an rng when lam is not given")
        lam = rng.beta(alpha, alpha)
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"mixing weight must lie in [0, 1], got {lam}")
    if lam == 1.0:
        return x_i.copy(), y_i.copy()
    return lam * x_i + (1.0 - lam) * x_j, lam * y_i + (1.0 - lam) * y_j


def mixup_batch(x: np.ndarray, y: np.ndarray, rng: np.random.Generator, alpha: float = 0.4):
    """Mix a batch with a shuffled copy of itself using one weight per batch."""
    perm = rng.permutation(x.shape[0])
    lam = rng.beta(alpha, alpha)
    return mixup(x, x[perm], y, y[perm], lam=lam)


def draw_masks(length: int, count: int, max_width: int, rng: np.random.Generator):
    masks = []
    for _ in range(count):
        width = int(rng.integers(0, max_width + 1))
        start = int(rng.integers(0, length - width + 1))
        masks.append((start, width))
    return masks


def spec_augment(x: np.ndarray, config: SpecAugmentConfig = SpecAugmentConfig(),
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Mask random time rows and mel columns of a (time, mels) spectrogram with its mean."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise DimensionError(f"spec_augment expects (time, mels), got shape {x.shape}")
    T, M = x.shape
    if config.max_mask_width > min(T, M):
        raise ValidationError(f"mask width {config.max_mask_width} exceeds spectrogram {x.shape}")
    out = x.copy()
    if not config.enabled or config.max_mask_width == 0:
        return out
    rng = rng if rng is not None else np.random.default_rng()
    fill = x.mean()
    for start, width in draw_masks(T, config.n_time_masks, config.max_mask_width, rng):
        out[start:start + width, :] = fill
    for start, width in draw_masks(M, config.n_freq_masks, config.max_mask_width, rng):
        out[:, start:start + width] = fill
    return out


@dataclass
class SpectrumCorrector:
    """Per-mel-bin gains mapping the device-A mean spectrum onto the reference."""

    reference_spectrum: np.ndarray
    device_a_spectrum: np.ndarray

    def __post_init__(self):
        self.reference_spectrum = np.asarray(self.reference_spectrum, dtype=np.float64)
        self.device_a_spectrum = np.asarray(self.device_a_spectrum, dtype=np.float64)
        if self.reference_spectrum.shape != self.device_a_spectrum.shape:
            raise DimensionError("reference and device-A spectra differ in length")
        if np.any(self.reference_spectrum <= 0) or np.any(self.device_a_spectrum <= 0):
            raise ValidationError("mean spectra must be strictly positive")

    @property
    def correction(self) -> np.ndarray:
        return self.reference_spectrum / self.device_a_spectrum


def fit_spectrum_corrector(device_means: Mapping[str, np.ndarray], reference_device: str = "a",
                           floor: float = 1e-10) -> SpectrumCorrector:
    """Reference = unweighted mean of the per-device mean spectra of every device but ``reference_device``."""
    means = {str(k).lower(): np.maximum(np.asarray(v, dtype=np.float64), floor) for k, v in device_means.items()}
    ref_key = reference_device.lower()
    if ref_key not in means:
        raise ConfigurationError(f"device {reference_device!r} missing from the device means")
    others = [v for k, v in sorted(means.items()) if k != ref_key]
    if not others:
        raise ConfigurationError("spectrum correction needs at least one device other than the reference device")
    return SpectrumCorrector(np.mean(others, axis=0), means[ref_key])


def device_mean_spectra(spectrograms: Sequence[np.ndarray], devices: Sequence[str]) -> dict:
    """Mean linear-power mel spectrum per device, pooled over all frames of its clips."""
    sums, counts = {}, {}
    for spec, dev in zip(spectrograms, devices):
        lin = np.exp(np.asarray(spec, dtype=np.float64))
        key = str(dev).lower()
        sums[key] = sums.get(key, 0.0) + lin.sum(axis=0)
        counts[key] = counts.get(key, 0) + lin.shape[0]
    return {k: sums[k] / counts[k] for k in sums}


def apply_correction(x_linear: np.ndarray, corrector: SpectrumCorrector) -> np.ndarray:
    """Scale each mel bin of a linear-power (time, mels) spectrogram."""
    x_linear = np.asarray(x_linear, dtype=np.float64)
    if x_linear.shape[-1] != corrector.correction.size:
        raise DimensionError(f"mel axis: corrector has {corrector.correction.size} bins, input {x_linear.shape[-1]}")
    if np.any(x_linear < 0):
        raise ValidationError("apply_correction expects linear power (non-negative); got negative values, log-domain input?")
    return x_linear * corrector.correction


def correct_log_mel(x_log: np.ndarray, corrector: SpectrumCorrector) -> np.ndarray:
    """Convenience wrapper: exp, correct, re-log."""
    return np.log(apply_correction(np.exp(np.asarray(x_log, dtype=np.float64)), corrector))
