"""JSON run configuration with strict key checking and ``key=value`` overrides.

Schema (every section and key optional; unknown keys are rejected)::

    {
      "network":     {NetworkConfig fields},
      "train":       {TrainConfig fields, incl. "mixup": {...}, "specaugment": {...}},
      "spectrogram": {SpectrogramConfig fields}
    }
"""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .dsp import SpectrogramConfig
from .errors import ConfigurationError
from .network import NetworkConfig
from .train import TrainConfig


@dataclass
class Config:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "train": self.train.to_dict(),
            "spectrogram": dataclasses.asdict(self.spectrogram),
        }


def _build(cls, data: Mapping[str, Any], path: str):
    if not isinstance(data, Mapping):
        raise ConfigurationError(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    default = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigurationError(f"unknown config field '{where}'")
        current = getattr(default, key)
        if dataclasses.is_dataclass(current):
            value = _build(type(current), value, where)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path or 'config'}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{path or 'config'}: invalid value ({exc})") from None


def config_from_dict(data: Mapping[str, Any]) -> Config:
    return _build(Config, data, "")


def load_config_text(text: str, source: str = "<config>") -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a JSON object")
    return data


def load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return load_config_text(fh.read(), str(path))


def parse_override(item: str):
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    """Set dotted keys; every key must name an existing config field."""
    data = copy.deepcopy(data)
    reference = Config().to_dict()
    for item in overrides:
        key, value = parse_override(item)
        parts = key.split(".")
        ref, target = reference, data
        for i, part in enumerate(parts):
            if not isinstance(ref, dict) or part not in ref:
                raise ConfigurationError(f"unknown config field '{'.'.join(parts[:i + 1])}'")
            ref = ref[part]
            if i == len(parts) - 1:
                target[part] = value
            else:
                target = target.setdefault(part, {})
    return data


def toy_config_dict() -> dict:
    """Settings for the bundled synthetic set (tiny DSSDN-Small, 30 epochs)."""
    return {
        "network": {
            "variant": "small",
            "stage_channels": [8] * 5,
            "stem_pool": [1, 1],
            "block_pool": [2, 2],
            "osc_mid_ratio": 0.5,
        },
        "train": {"epochs": 30, "batch_size": 16, "base_lr": 0.05, "momentum": 0.9},
    }
