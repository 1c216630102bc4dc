"""Dataset manifests, spectrogram loading and the bundled synthetic scene set."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import dsp
from .errors import DataError

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("path", "label", "device", "city")


@dataclass
class Record:
    path: str
    label: int
    device: str = ""
    city: str = ""


def read_manifest(path, n_classes: int = 10) -> List[Record]:
    """Parse a ``path,label,device,city`` CSV; relative paths resolve against its directory."""
    base = Path(path).resolve().parent
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:2]] != ["path", "label"]:
            raise DataError(f"{path}: manifest header must start with 'path,label'")
        for lineno, row in enumerate(reader, start=2):
            try:
                label = int(row["label"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: label {row.get('label')!r} is not an integer") from None
            if not 0 <= label < n_classes:
                raise DataError(f"{path}:{lineno}: label {label} outside 0..{n_classes - 1}")
            p = Path(row["path"])
            records.append(Record(str(p if p.is_absolute() else base / p), label,
                                  (row.get("device") or "").strip(), (row.get("city") or "").strip()))
    return records


def write_manifest(path, records: Sequence[Record]) -> None:
    base = Path(path).resolve().parent
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            p = Path(r.path).resolve()
            try:
                p = p.relative_to(base)
            except ValueError:
                pass
            w.writerow([str(p), r.label, r.device, r.city])


def load_spectrogram(record: Record, config: dsp.SpectrogramConfig = dsp.SpectrogramConfig()) -> np.ndarray:
    if record.path.lower().endswith(".wav"):
        return dsp.log_mel(dsp.load_wav(record.path), config).astype(np.float32)
    return dsp.cache_read(record.path)


def load_dataset(records: Sequence[Record], config: dsp.SpectrogramConfig = dsp.SpectrogramConfig()):
    """Load every readable record; unreadable ones are skipped with a warning.

    Returns (spectrograms, labels, devices, cities, kept_records).
    """
    specs, kept = [], []
    for r in records:
        try:
            specs.append(load_spectrogram(r, config))
            kept.append(r)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable sample %s: %s", r.path, exc)
    if not kept:
        raise DataError("no readable samples in the manifest")
    shapes = {s.shape for s in specs}
    if len(shapes) != 1:
        raise DataError(f"spectrograms differ in shape: {sorted(shapes)[:3]}")
    return (np.stack(specs), np.array([r.label for r in kept], dtype=np.int64),
            [r.device for r in kept], [r.city for r in kept], kept)


def split_validation(records: Sequence[Record], seed: int = 0, fraction: float = 0.1) -> Tuple[list, list]:
    """Hold out one city when city ids exist, else a seeded uniform fraction."""
    cities = sorted({r.city for r in records if r.city})
    if len(cities) >= 2 and all(r.city for r in records):
        held = cities[-1]
        return [r for r in records if r.city != held], [r for r in records if r.city == held]
    idx = np.random.default_rng(seed).permutation(len(records))
    n_val = max(1, int(round(fraction * len(records)))) if len(records) > 1 else 0
    val = set(idx[:n_val].tolist())
    return [r for i, r in enumerate(records) if i not in val], [r for i, r in enumerate(records) if i in val]


# -- synthetic scenes ----------------------------------------------------

DEVICE_TILT = {"a": 0.0, "b": 0.6, "c": -0.6}
BAND_WIDTHS = (0.125, 0.25, 0.375, 0.5625, 0.8125)  # fraction of half the mel axis


def synthetic_spectrogram(label: int, rng: np.random.Generator, n_time: int = 32, n_mels: int = 32,
                          n_classes: int = 10, device: str = "a") -> np.ndarray:
    """Log-mel-like noise floor plus one band-limited energy pattern.

    ``label % 2`` puts the band in the low or high half of the mel axis and
    ``label // 2`` sets its width. Position inside the half, level, and a
    class-independent temporal gating are jittered per clip.
    """
    if n_classes > 2 * len(BAND_WIDTHS):
        raise ValueError(f"synthetic set supports at most {2 * len(BAND_WIDTHS)} classes")
    half = n_mels // 2
    width = max(1, int(round(BAND_WIDTHS[label // 2] * half)))
    start = int(rng.integers(0, half - width + 1)) + (half if label % 2 else 0)
    spec = -1.0 + 0.5 * rng.standard_normal((n_time, n_mels))
    period = int(rng.choice([0, 4, 8]))
    t = np.arange(n_time)
    gate = np.ones(n_time) if period == 0 else np.where((t // (period // 2)) % 2 == 0, 1.0, 0.8)
    spec[:, start:start + width] += rng.uniform(2.7, 3.3) * gate[:, None]
    spec += DEVICE_TILT.get(device, 0.0) * np.linspace(-1.0, 1.0, n_mels)[None, :]
    return spec.astype(np.float32)


def make_synthetic(n_per_class: int, seed: int = 0, n_time: int = 32, n_mels: int = 32, n_classes: int = 10,
                   devices: Sequence[str] = ("a", "a", "b", "c"), cities: Sequence[str] = ("city0", "city1", "city2", "city3")):
    """Balanced synthetic corpus: returns (specs, labels, devices, cities)."""
    rng = np.random.default_rng(seed)
    specs, labels, devs, cits = [], [], [], []
    for i in range(n_per_class):
        for k in range(n_classes):
            dev = devices[int(rng.integers(len(devices)))]
            specs.append(synthetic_spectrogram(k, rng, n_time, n_mels, n_classes, dev))
            labels.append(k)
            devs.append(dev)
            cits.append(cities[i % len(cities)])
    return np.stack(specs), np.array(labels, dtype=np.int64), devs, cits


def write_synthetic(out_dir, n_per_class: int, seed: int = 0, **kw) -> str:
    """Write caches plus ``manifest.csv`` under ``out_dir``; return the manifest path."""
    out = Path(out_dir)
    (out / "spec").mkdir(parents=True, exist_ok=True)
    specs, labels, devs, cits = make_synthetic(n_per_class, seed, **kw)
    records = []
    for i, (s, y, d, c) in enumerate(zip(specs, labels, devs, cits)):
        p = out / "spec" / f"clip{i:05d}.dssd"
        dsp.cache_write(p, s)
        records.append(Record(str(p), int(y), d, c))
    manifest = out / "manifest.csv"
    write_manifest(manifest, records)
    return str(manifest)


def cache_name(wav_path: str, index: int) -> str:
    stem = Path(wav_path).stem
    return f"{index:05d}_{stem}.dssd"


def is_up_to_date(cache_path: str, source_path: str) -> bool:
    try:
        return os.path.getmtime(cache_path) >= os.path.getmtime(source_path)
    except OSError:
        return False


def record_from(r: Record, path: Optional[str] = None) -> Record:
    return Record(path or r.path, r.label, r.device, r.city)
