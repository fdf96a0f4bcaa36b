"""Experiment configuration: one nested YAML file holding every tunable.

Unknown keys are rejected at any depth.  ``key.path=value`` overrides are
applied on top of the file, and the resolved config is what gets written
next to the outputs.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .augment import AugPolicy
from .data import SyntheticSceneSpec
from .discriminator import DiscriminatorConfig, desk_discriminator_config
from .filterbank import DEFAULT_BETA, DEFAULT_K_MAX, DEFAULT_K_MIN, DEFAULT_N_FILTERS
from .generator import SynthesisConfig, desk_synthesis_config
from .superres import SRConfig, desk_sr_config
from .training import TrainConfig, lowres_train_config, superres_train_config

DATA_ROOT_ENV = "LONGVIDEO_DATA_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class BankConfig:
    n_filters: int = DEFAULT_N_FILTERS
    k_min: int = DEFAULT_K_MIN
    k_max: int = DEFAULT_K_MAX
    beta: float = DEFAULT_BETA


@dataclass
class DataConfig:
    root: str = "data/synthetic"  # low-res training store
    sr_root: str = ""  # super-res store; defaults to root
    level: str = "low"


@dataclass
class SyntheticConfig:
    scene: SyntheticSceneSpec = field(default_factory=SyntheticSceneSpec)
    n_clips: int = 64
    frames: int = 128
    high: list[int] = field(default_factory=lambda: [128, 128])
    low: list[int] = field(default_factory=lambda: [32, 32])


@dataclass
class MetricsConfig:
    segments: int = 2048
    segment_len: int = 16
    extractor_seed: int = 0
    extractor_dim: int = 128
    hist_bins: int = 20
    curve_clips: int = 1000
    curve_frames: int = 128
    fidv_frames: int = 50000


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    filterbank: BankConfig = field(default_factory=BankConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    superres: SRConfig = field(default_factory=SRConfig)
    augment: AugPolicy = field(default_factory=AugPolicy)
    train: TrainConfig = field(default_factory=lowres_train_config)
    train_superres: TrainConfig = field(default_factory=superres_train_config)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def data_root(self) -> Path:
        return resolve_data_path(self.data.root)

    def sr_data_root(self) -> Path:
        return resolve_data_path(self.data.sr_root or self.data.root)


def resolve_data_path(path: str) -> Path:
    """Relative dataset paths are resolved against ``$LONGVIDEO_DATA_ROOT`` when set."""
    p = Path(path)
    base = os.environ.get(DATA_ROOT_ENV)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    default = cls()
    kwargs = {}
    for name, f in fields.items():
        current = getattr(default, name)
        if name not in data:
            kwargs[name] = current
            continue
        value = data[name]
        if dataclasses.is_dataclass(current):
            value = _build(type(current), value, f"{path}.{name}" if path else name)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path or 'config'}: {e}") from e


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "")


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` strings (values parsed as YAML) to a nested dict."""
    data = dict(data)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node[p] = dict(node.get(p) or {})
            node = node[p]
        node[parts[-1]] = value
    return data


def load_config(path=None, overrides: list[str] | None = None) -> ExperimentConfig:
    data = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    return from_dict(apply_overrides(data, overrides or []))


def dump_config(cfg: ExperimentConfig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)


def desk_config(resolution: int = 32, frames: int = 32, **kw) -> ExperimentConfig:
    """Scaled-down preset that trains on one CPU: 32x32 low-res, channels / 8,
    batch 8, T = 32, a 16-filter bank spanning 4..64 frames, super-res 8 -> 32."""
    sr_low = resolution // 4
    cfg = ExperimentConfig(
        output_dir="runs/desk",
        data=DataConfig(root="data/synthetic", sr_root="data/synthetic_sr"),
        synthetic=SyntheticConfig(n_clips=48, frames=128, high=[resolution * 4] * 2, low=[resolution] * 2),
        filterbank=BankConfig(n_filters=16, k_min=4, k_max=64),
        synthesis=desk_synthesis_config(resolution),
        discriminator=desk_discriminator_config(frames=frames, resolution=resolution),
        superres=desk_sr_config(low=sr_low),
        augment=AugPolicy(max_translation=max(1, resolution // 8)),
        train=lowres_train_config(square=True, batch=8, frames=frames, ema_beta=0.999, steps=600,
                                  eval_every=100, eval_segments=512, eval_segment_len=16),
        train_superres=superres_train_config(batch=8, ema_beta=0.999, steps=1000, eval_every=100,
                                             eval_segments=256, eval_segment_len=16),
        metrics=MetricsConfig(segments=512, curve_clips=48, fidv_frames=2048),
    )
    return dataclasses.replace(cfg, **kw)


PRESETS = {"paper": ExperimentConfig, "desk": desk_config}
