"""Flat ``key = value`` pipeline configuration with typed validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from fer4d.errors import ConfigError
from fer4d.rankpool import VARIANTS


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 7
    # synthetic data
    synth_subjects: int = 10
    synth_frames: int = 20
    synth_noise: float = 0.005
    # input dataset; empty means the workspace's synthetic dataset
    manifest: str = ""
    # cleaning
    forehead_fraction: float = 0.6
    crop_margin: float = 0.02
    outlier_k: int = 8
    outlier_mult: float = 2.0
    # geometric images
    views: tuple[float, ...] = (-30.0, 0.0, 30.0)
    image_size: int = 64
    clahe_clip: float = 0.01
    clahe_tiles: int = 8
    # dynamic images
    pooling: str = "linear_arp"
    net_input: int = 32
    # landmark stream
    landmark_image_size: int = 64
    landmark_radius: int = 1
    descriptor_grid: int = 8
    # dynamic-image network
    cnn_filters: tuple[int, ...] = (8, 16)
    cnn_lr: float = 0.05
    cnn_epochs: int = 40
    cnn_batch: int = 8
    cnn_weight_decay: float = 1e-4
    # landmark sequence network
    lstm_input_gain: float = 4.0
    lstm_hidden: int = 32
    lstm_dropout: float = 0.5
    lstm_lr: float = 0.3
    lstm_epochs: int = 60
    lstm_batch: int = 8
    lstm_weight_decay: float = 1e-4
    # protocol
    folds: int = 10
    repetitions: int = 1

    def __post_init__(self):
        problems = []

        def need(cond, msg):
            if not cond:
                problems.append(msg)

        need(self.synth_subjects >= 1 and self.synth_frames >= 1, "synth counts must be positive")
        need(self.synth_noise >= 0, "synth_noise must be >= 0")
        need(self.forehead_fraction > 0, "forehead_fraction must be > 0")
        need(self.crop_margin >= 0, "crop_margin must be >= 0")
        need(self.outlier_k >= 1 and self.outlier_mult > 0, "outlier_k >= 1 and outlier_mult > 0 required")
        need(len(self.views) >= 1, "at least one view required")
        need(all(-90 < v < 90 for v in self.views), "views must lie in (-90, 90) degrees")
        need(len({_tag(v) for v in self.views}) == len(self.views), "views must map to distinct profiles")
        need(self.image_size >= 8, "image_size must be >= 8")
        need(0 < self.clahe_clip <= 1 and self.clahe_tiles >= 1, "bad CLAHE parameters")
        need(self.pooling in VARIANTS, f"pooling must be one of {VARIANTS}")
        need(self.net_input >= 4 and self.image_size % self.net_input == 0,
             "net_input must be >= 4 and divide image_size")
        need(self.landmark_image_size >= 8 and self.landmark_radius >= 0, "bad landmark image parameters")
        need(self.descriptor_grid >= 1 and self.landmark_image_size % self.descriptor_grid == 0,
             "descriptor_grid must divide landmark_image_size")
        need(all(f >= 1 for f in self.cnn_filters), "cnn_filters must be positive")
        need(self.net_input >> len(self.cnn_filters) >= 1, "too many pooling stages for net_input")
        need(self.lstm_hidden >= 1 and 0 <= self.lstm_dropout < 1, "bad LSTM parameters")
        need(self.lstm_input_gain > 0, "lstm_input_gain must be > 0")
        for name in ("cnn", "lstm"):
            need(getattr(self, f"{name}_lr") >= 0, f"{name}_lr must be >= 0")
            need(getattr(self, f"{name}_epochs") >= 1, f"{name}_epochs must be >= 1")
            need(getattr(self, f"{name}_batch") >= 1, f"{name}_batch must be >= 1")
            need(getattr(self, f"{name}_weight_decay") >= 0, f"{name}_weight_decay must be >= 0")
        need(self.folds >= 1 and self.repetitions >= 1, "folds and repetitions must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    def replace(self, **changes) -> PipelineConfig:
        return dataclasses.replace(self, **changes)

    def value_text(self, key: str) -> str:
        return _format(getattr(self, key))

    def to_text(self) -> str:
        return "".join(f"{f.name} = {self.value_text(f.name)}\n" for f in fields(self))


def _tag(yaw: float) -> str:
    return "FP" if yaw == 0 else ("RP" if yaw < 0 else "LP")


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _convert(key, raw, ftype):
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
        if ftype in ("str", str):
            return raw
        if "tuple[float" in str(ftype):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if "tuple[int" in str(ftype):
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {ftype}") from None
    raise ConfigError(f"{key}: unsupported type {ftype}")


def parse_config(text: str, source="<config>") -> PipelineConfig:
    types = {f.name: f.type for f in fields(PipelineConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (p.strip() for p in s.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, types[key])
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))
