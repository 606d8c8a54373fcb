"""Pipeline configuration: strict JSON parsing with defaults and bounds."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FatigueNetError, InvalidConfigError
from .model import LossWeights, ScheduleParams
from .pipeline import DSPConfig
from .synthgen import SynthConfig
from .training import LR_SCHEDULES, OPTIMIZERS, TrainConfig

# (min, max) inclusive bounds; None = unbounded on that side
BOUNDS = {
    "synth.n_subjects": (4, None),
    "synth.trials_per_borg": (1, None),
    "synth.imu_noise": (0.0, 0.49),
    "synth.bump_width": (0.01, 0.99),
    "dsp.bandpass_low_hz": (0.0, None),
    "dsp.bandpass_order": (1, 10),
    "dsp.notch_q": (0.1, None),
    "dsp.imu_cutoff_hz": (0.1, None),
    "dsp.rms_window": (1, None),
    "dsp.rms_stride": (1, None),
    "dsp.aligned_rate": (1.0, None),
    "dsp.n_scales": (4, 512),
    "dsp.n_time": (4, 512),
    "dsp.f_min": (0.01, None),
    "dsp.wavelet_bandwidth": (1e-6, None),
    "dsp.wavelet_center": (1e-6, None),
    "dsp.min_hold_s": (0.0, None),
    "train.epochs": (1, None),
    "train.batch_size": (2, None),
    "train.learning_rate": (1e-12, 10.0),
    "train.momentum": (0.0, 0.999999),
    "train.eval_batch": (1, None),
    "train.weights.alpha": (0.0, None),
    "train.weights.beta": (0.0, None),
    "train.weights.tau": (1e-6, None),
    "train.schedule.gamma": (1e-9, None),
    "train.schedule.k": (1e-9, None),
    "folds.k": (2, None),
}
CHOICES = {
    "train.optimizer": OPTIMIZERS,
    "train.lr_schedule": LR_SCHEDULES,
    "train.variant": ("iadan", "idan", "ian", "adan"),
    "train.dtype": ("float32", "float64"),
}


@dataclass(frozen=True)
class FoldConfig:
    k: int = 4
    seed: int = 0


@dataclass(frozen=True)
class PathConfig:
    recordings: str = "recordings"
    images: str = "images"
    results: str = "results"


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    dsp: DSPConfig = field(default_factory=DSPConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: FoldConfig = field(default_factory=FoldConfig)
    paths: PathConfig = field(default_factory=PathConfig)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            raise InvalidConfigError(f"unknown config key '{where + '.' if where else ''}{key}'")
    kwargs = {}
    defaults = cls()
    for name, f in fields.items():
        path = f"{where}.{name}" if where else name
        if name not in data:
            continue
        value = data[name]
        default = getattr(defaults, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, path)
            continue
        kwargs[name] = _coerce(value, default, path)
    try:
        return cls(**kwargs)
    except FatigueNetError as exc:
        raise InvalidConfigError(f"{where}: {exc}") from exc


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfigError(f"{path} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfigError(f"{path} must be an integer")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfigError(f"{path} must be a number")
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidConfigError(f"{path} must be a string")
    elif isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                  for v in value):
            raise InvalidConfigError(f"{path} must be a list of integers")
        value = tuple(value)
    if path in BOUNDS:
        lo, hi = BOUNDS[path]
        if lo is not None and value < lo:
            raise InvalidConfigError(f"{path} = {value} violates bound >= {lo}")
        if hi is not None and value > hi:
            raise InvalidConfigError(f"{path} = {value} violates bound <= {hi}")
    if path in CHOICES and value not in CHOICES[path]:
        raise InvalidConfigError(f"{path} = {value!r} not one of {CHOICES[path]}")
    return value


def config_from_dict(data) -> PipelineConfig:
    return _build(PipelineConfig, data, "")


def parse_config(path=None) -> PipelineConfig:
    """Read a JSON config file; ``None`` gives the all-defaults config."""
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}: malformed JSON ({exc.msg}, line {exc.lineno})") from exc
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return list(v)
        return v
    return conv(cfg)


def serialize_config(cfg: PipelineConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


__all__ = ["PipelineConfig", "FoldConfig", "PathConfig", "parse_config", "config_from_dict",
           "config_to_dict", "serialize_config", "LossWeights", "ScheduleParams"]
