"""Training loop, learning-rate schedule, loss and evaluation metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import functional as F
from .augment import (
    MixupConfig,
    SpecAugmentConfig,
    correct_log_mel,
    device_mean_spectra,
    fit_spectrum_corrector,
    mixup_batch,
    spec_augment,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, TrainingError, UsageError
from .tensor import Tensor, add, backward, mul, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    base_lr: float = 1e-3
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    ortho_lambda: float = 1e-4
    dtype: str = "float32"
    spectrum_correction: bool = True
    mixup: MixupConfig = field(default_factory=MixupConfig)
    specaugment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)

    def __post_init__(self):
        if isinstance(self.mixup, dict):
            self.mixup = MixupConfig(**self.mixup)
        if isinstance(self.specaugment, dict):
            self.specaugment = SpecAugmentConfig(**self.specaugment)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ConfigurationError(f"base_lr must be > 0, got {self.base_lr}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ArrayDataset:
    x: np.ndarray  # (N, time, mels)
    y: np.ndarray  # (N,) int labels
    devices: List[str] = field(default_factory=list)
    cities: List[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.y)
        self.devices = list(self.devices) or [""] * n
        self.cities = list(self.cities) or [""] * n
        if self.x.shape[0] != n or len(self.devices) != n or len(self.cities) != n:
            raise ConfigurationError("dataset arrays disagree in length")

    def __len__(self):
        return len(self.y)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr to 0; steps past the end clamp to 0."""
    if total_steps <= 0 or step >= total_steps:
        return 0.0
    step = max(step, 0)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


class SGD:
    """Plain SGD with optional momentum and L2 weight decay (both off by default)."""

    def __init__(self, named_params, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: Dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        for name, p in self.params:
            if p.grad is None:
                raise TrainingError(f"parameter {name} has no gradient")
        for name, p in self.params:
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                buf = self.buffers.get(name)
                buf = g.copy() if buf is None else self.momentum * buf + g
                self.buffers[name] = buf
                g = buf
            p.data = (p.data - lr * g).astype(p.dtype, copy=False)
            p.grad = None

    def state(self) -> Dict[str, np.ndarray]:
        return {f"momentum/{k}": v for k, v in self.buffers.items()}

    def load_state(self, tensors: Dict[str, np.ndarray]) -> None:
        dtypes = {n: p.dtype for n, p in self.params}
        self.buffers = {
            k[len("momentum/"):]: v.astype(dtypes.get(k[len("momentum/"):], v.dtype))
            for k, v in tensors.items() if k.startswith("momentum/")
        }


def sgd_step(params, lr: float) -> None:
    """p <- p - lr * grad for each parameter, then clear the gradients."""
    SGD([(str(i), p) for i, p in enumerate(params)]).step(lr)


def total_loss(logits: Tensor, targets, model, ortho_lambda: float = 1e-4) -> Tensor:
    """Cross-entropy plus the weighted orthonormality penalty of every OSC layer."""
    loss = F.softmax_cross_entropy(logits, targets)
    layers = model.osc_layers() if hasattr(model, "osc_layers") else []
    if not layers or ortho_lambda == 0:
        return loss
    for layer in layers:
        loss = add(loss, mul(layer.penalty(), ortho_lambda))
    return loss


def ortho_term(model) -> float:
    with no_grad():
        return float(sum(layer.penalty().item() for layer in model.osc_layers()))


# -- evaluation ----------------------------------------------------------

@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray
    per_device: Dict[str, float]

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion.tolist(), "per_device": self.per_device}

    def format(self) -> str:
        lines = [f"accuracy: {self.accuracy:.4f}", "confusion (rows = true, cols = predicted):"]
        lines += [" ".join(f"{v:5d}" for v in row) for row in self.confusion]
        for dev, acc in sorted(self.per_device.items()):
            lines.append(f"device {dev or '?'}: {acc:.4f}")
        return "\n".join(lines)


def binary_accuracy(tp: int, tn: int, fp: int, fn: int) -> float:
    return (tp + tn) / (tp + tn + fp + fn)


def predict(model, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    dtype = model.parameters()[0].dtype
    preds = []
    with no_grad():
        for i in range(0, len(x), batch_size):
            xb = Tensor(np.asarray(x[i:i + batch_size])[:, None], dtype=dtype)
            preds.append(model(xb).data.argmax(axis=1))
    return np.concatenate(preds)


def metrics_from(y_true: np.ndarray, y_pred: np.ndarray, devices: Sequence[str], n_classes: int) -> Metrics:
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    accuracy = float(np.trace(confusion) / confusion.sum())
    per_device = {}
    devices = np.asarray(devices)
    for dev in sorted(set(devices.tolist())):
        mask = devices == dev
        per_device[dev] = float((y_true[mask] == y_pred[mask]).mean())
    return Metrics(accuracy, confusion, per_device)


def evaluate(model, dataset: ArrayDataset, batch_size: int = 64) -> Metrics:
    if len(dataset) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    preds = predict(model, dataset.x, batch_size)
    return metrics_from(dataset.y, preds, dataset.devices, model.config.n_classes)


# -- training ------------------------------------------------------------

def with_spectrum_correction(ds: ArrayDataset) -> ArrayDataset:
    """Append device-A clips corrected toward the other devices' mean spectrum."""
    devices = [d.lower() for d in ds.devices]
    if "a" not in devices or not any(d and d != "a" for d in devices):
        log.info("spectrum correction skipped: needs device 'a' and at least one other device")
        return ds
    corrector = fit_spectrum_corrector(device_mean_spectra(ds.x, devices))
    idx = [i for i, d in enumerate(devices) if d == "a"]
    extra = np.stack([correct_log_mel(ds.x[i], corrector) for i in idx]).astype(ds.x.dtype)
    return ArrayDataset(
        np.concatenate([ds.x, extra]),
        np.concatenate([ds.y, ds.y[idx]]),
        ds.devices + ["a*"] * len(idx),
        ds.cities + [ds.cities[i] for i in idx],
    )


def steps_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def run_epoch(model, opt: SGD, ds: ArrayDataset, config: TrainConfig, epoch: int, step: int, total_steps: int):
    """One pass over ``ds``; returns (mean loss, lr at last step, next step)."""
    rng = epoch_rng(config.seed, epoch)
    dtype = np.dtype(config.dtype)
    n_classes = model.config.n_classes
    p_mix = config.mixup.probability(epoch, config.epochs)
    perm = rng.permutation(len(ds))
    losses = []
    lr = cosine_lr(step, total_steps, config.base_lr)
    for b in range(0, len(ds), config.batch_size):
        idx = perm[b:b + config.batch_size]
        xb = ds.x[idx].astype(np.float64)
        if config.specaugment.enabled:
            xb = np.stack([spec_augment(s, config.specaugment, rng) for s in xb])
        yb = F.one_hot(ds.y[idx], n_classes)
        if p_mix > 0 and rng.random() < p_mix:
            xb, yb = mixup_batch(xb, yb, rng, config.mixup.alpha)
        logits = model(Tensor(xb[:, None], dtype=dtype))
        loss = total_loss(logits, yb, model, config.ortho_lambda)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
        backward(loss)
        lr = cosine_lr(step, total_steps, config.base_lr)
        opt.step(lr)
        losses.append(float(loss.data))
        step += 1
    return float(np.mean(losses)), lr, step


def train(model, config: TrainConfig, train_set: ArrayDataset, val_set: Optional[ArrayDataset] = None,
          log_path=None, checkpoint_path=None, resume: bool = False, max_epochs: Optional[int] = None) -> List[dict]:
    """Train in place. Returns the per-epoch log entries.

    Shuffling and augmentation draw from a generator seeded by (seed, epoch),
    so resuming from a checkpoint written after epoch ``e`` replays epoch ``e+1``
    exactly. ``max_epochs`` stops early (the schedule still spans
    ``config.epochs``), which is how a run is split for resume tests.
    """
    if len(train_set) == 0:
        raise TrainingError("training set is empty")
    if config.spectrum_correction:
        train_set = with_spectrum_correction(train_set)
    opt = SGD(model.named_parameters(), config.momentum, config.weight_decay)
    spe = steps_per_epoch(len(train_set), config.batch_size)
    total_steps = config.epochs * spe
    start = 0
    if resume:
        if checkpoint_path is None:
            raise UsageError("resume requires a checkpoint path")
        extra = load_checkpoint(checkpoint_path, model)
        opt.load_state(extra)
        state = json.loads(Path(f"{checkpoint_path}.state.json").read_text())
        start = int(state["epoch"])
    history = []
    step = start * spe
    end = config.epochs if max_epochs is None else min(config.epochs, start + max_epochs)
    log_fh = open(log_path, "a" if resume else "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(start, end):
            loss, lr, step = run_epoch(model, opt, train_set, config, epoch, step, total_steps)
            entry = {"epoch": epoch, "lr": lr, "train_loss": loss}
            if val_set is not None and len(val_set):
                entry["val_accuracy"] = evaluate(model, val_set).accuracy
            history.append(entry)
            log.info("epoch %d  lr %.3g  loss %.4f%s", epoch, lr, loss,
                     f"  val_acc {entry['val_accuracy']:.3f}" if "val_accuracy" in entry else "")
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if checkpoint_path:
                save_checkpoint(checkpoint_path, model, opt.state())
                Path(f"{checkpoint_path}.state.json").write_text(
                    json.dumps({"epoch": epoch + 1, "step": step, "train": config.to_dict(),
                                "network": model.config.to_dict()}, indent=2)
                )
    finally:
        if log_fh:
            log_fh.close()
    return history
