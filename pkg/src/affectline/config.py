"""Flat run configuration: one serializable source of truth.

Every pipeline knob is a key in RunConfig. Values load from a plain
``key = value`` text file and any key can be overridden on the command
line; the effective configuration is echoed into each output directory
so a run can be reproduced exactly from its artifacts.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .audio_io import EMOTIONS, CorpusFilter
from .checkpoint import FeatureSettings
from .errors import ConfigError
from .features import FrameConfig, MfccConfig
from .nn import ModelSpec
from .train_eval import TrainConfig, default_cache_dir


@dataclass
class RunConfig:
    # audio
    sample_rate_hz: int = 16000
    resample_method: str = "sinc"
    # framing
    frame_len_samples: int = 400
    hop_samples: int = 160
    window: str = "hamming"
    # mel cepstrum
    n_fft: int = 512
    n_mels: int = 26
    n_coeffs: int = 13
    fmin_hz: float = 0.0
    fmax_hz: float = 0.0  # 0 = Nyquist
    log_floor: float = 1e-10
    delta_window: int = 2
    # feature matrix
    t_fixed: int = 300
    # model
    conv_channels: str = "64,64,128,128,256,256"
    kernel: int = 3
    stride: int = 1
    pad: int = 1
    pool_width: int = 0  # 0 = global over remaining frames
    pool_stride: int = 0  # 0 = pool width
    # training
    epochs: int = 300
    batch_size: int = 25
    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-8
    seed: int = 42
    split_ratio: float = 0.8
    stratified: bool = True
    shuffle_each_epoch: bool = True
    early_stop_train_acc: float = 0.0
    patience: int = 0
    # corpus filter
    filter_sex: str = "female"  # female | male | any
    filter_emotions: str = ",".join(EMOTIONS)
    vocal_channels: str = "speech,song"
    # execution
    jobs: int = 0  # 0 = available cores
    cache_dir: str = ""  # "" = env var or default location
    chunk_vote: bool = False
    # paths ("" = must come from a flag)
    corpus: str = ""
    manifest: str = ""
    checkpoint: str = ""
    out: str = ""

    # -- serialization ----------------------------------------------------

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    def to_text(self) -> str:
        lines = []
        for name in sorted(self.field_names()):
            value = getattr(self, name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{name} = {value}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """New config with string values coerced onto the field types."""
        fields = {f.name: f for f in dataclasses.fields(self)}
        updates = {}
        for key, raw in overrides.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            updates[key] = _coerce(key, raw, type(getattr(self, key)))
        return dataclasses.replace(self, **updates)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls().with_overrides(parse_config_text(Path(path).read_text(encoding="utf-8")))

    # -- derived views -----------------------------------------------------

    def frame_config(self) -> FrameConfig:
        return FrameConfig(frame_len_samples=self.frame_len_samples,
                           hop_samples=self.hop_samples, window=self.window)

    def mfcc_config(self) -> MfccConfig:
        return MfccConfig(n_fft=self.n_fft, n_mels=self.n_mels, n_coeffs=self.n_coeffs,
                          fmin_hz=self.fmin_hz, fmax_hz=self.fmax_hz,
                          log_floor=self.log_floor, delta_window=self.delta_window)

    def feature_settings(self) -> FeatureSettings:
        return FeatureSettings(sample_rate_hz=self.sample_rate_hz,
                               resample_method=self.resample_method,
                               frame=self.frame_config(), mfcc=self.mfcc_config(),
                               t_fixed=self.t_fixed)

    def model_spec(self) -> ModelSpec:
        try:
            channels = tuple(int(c) for c in self.conv_channels.split(",") if c.strip())
        except ValueError as exc:
            raise ConfigError(f"bad conv_channels {self.conv_channels!r}") from exc
        return ModelSpec(in_channels=41, in_frames=self.t_fixed, conv_channels=channels,
                         kernel=self.kernel, stride=self.stride, pad=self.pad,
                         pool_width=self.pool_width, pool_stride=self.pool_stride)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           rho=self.rho, eps=self.eps, seed=self.seed,
                           split_ratio=self.split_ratio, stratified=self.stratified,
                           shuffle_each_epoch=self.shuffle_each_epoch,
                           early_stop_train_acc=self.early_stop_train_acc,
                           patience=self.patience)

    def corpus_filter(self) -> CorpusFilter:
        if self.filter_sex not in ("female", "male", "any"):
            raise ConfigError(f"filter_sex must be female/male/any, got {self.filter_sex!r}")
        emotions = frozenset(e.strip() for e in self.filter_emotions.split(",") if e.strip())
        bad = emotions - set(EMOTIONS)
        if bad:
            raise ConfigError(f"unknown emotions in filter: {sorted(bad)}")
        channels = frozenset(c.strip() for c in self.vocal_channels.split(",") if c.strip())
        if not channels <= {"speech", "song"}:
            raise ConfigError(f"vocal_channels must be speech/song, got {self.vocal_channels!r}")
        return CorpusFilter(sex=None if self.filter_sex == "any" else self.filter_sex,
                            emotions=emotions, vocal_channels=channels)

    def resolve_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)

    def resolve_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else default_cache_dir()


def _coerce(key: str, raw, target_type):
    if isinstance(raw, target_type) and not (target_type is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    try:
        if target_type is bool:
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment line."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out
