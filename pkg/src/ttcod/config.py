"""Experiment configuration: key=value text form, CLI overlay and provenance hash."""
from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .data import DataSpec
from .model import ModelConfig

OUTPUT_ROOT_ENV = "TTCOD_OUTPUT_ROOT"

# full-scale reference training setup, recorded for documentation only
REFERENCE_SETUP = {
    "optimizer": "adam",
    "lr": 1e-5,
    "epochs": 290,
    "batch_size": 16,
    "image_size": 1024,
}


@dataclass
class ExperimentConfig:
    image_size: int = 256
    channels: int = 32
    decoder_channels: int = 16
    variant: str = "M3"
    depth: int = 4
    channel_scale: float | None = None
    inner_lr: float = 0.005
    mini_batch: int = 16
    residual: bool = False
    subband: str = "hh"
    lr: float = 0.3
    steps: int = 200
    batch_size: int = 4
    data_seed: int = 0
    model_seed: int = 0
    n_train: int = 200
    n_test: int = 50
    contrast: float = 0.05
    probe_size: int = 32
    probe_seed: int = 1234

    def __post_init__(self):
        for name in ("image_size", "channels", "decoder_channels", "mini_batch", "batch_size",
                     "n_train", "n_test", "probe_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0 or self.lr < 0 or self.inner_lr < 0 or self.contrast < 0:
            raise ValueError("steps, lr, inner_lr and contrast must be non-negative")
        self.model_config()   # validates variant/depth/size

    def model_config(self) -> ModelConfig:
        from .rsampc import RsampcConfig

        cfg = ModelConfig(
            image_size=self.image_size, channels=self.channels,
            decoder_channels=self.decoder_channels, variant=self.variant, depth=self.depth,
            channel_scale=self.channel_scale, inner_lr=self.inner_lr, mini_batch=self.mini_batch,
            residual=self.residual, subband=self.subband, seed=self.model_seed)
        RsampcConfig(cfg.channels, cfg.depth, cfg.channel_scale)
        return cfg

    def data_spec(self) -> DataSpec:
        return DataSpec(self.image_size, self.n_train, self.n_test, self.contrast, self.data_seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- text form -----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                text = "none"
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = dataclasses.asdict(base) if base is not None else {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            kwargs[key] = parse_value(key, raw)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
            key, raw = line.split("=", 1)
            values[key.strip()] = raw.strip()
        return cls.from_mapping(values, base)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def parse_value(key: str, raw):
    if not isinstance(raw, str):
        return raw
    kind = _TYPES[key]
    if kind == "bool":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "float | None":
        return None if raw.lower() in ("none", "") else float(raw)
    return raw


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def resolve_output(path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else output_root() / p
