"""Versioned binary model checkpoints.

Layout: magic ``AFL1``, little-endian uint32 header length, a UTF-8 JSON
header (architecture, feature settings, normalization profile, class
ordering, training metadata, tensor manifest), then every tensor as raw
little-endian float32 in manifest order. Save/load round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audio_io import EMOTIONS
from .errors import DataError
from .features import FrameConfig, MfccConfig, NormalizationProfile
from .nn import Model, ModelSpec

MAGIC = b"AFL1"
FORMAT_VERSION = 1


class CheckpointError(DataError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass(frozen=True)
class FeatureSettings:
    """Everything needed to re-extract features exactly as at train time."""

    sample_rate_hz: int = 16000
    resample_method: str = "sinc"
    frame: FrameConfig = FrameConfig()
    mfcc: MfccConfig = MfccConfig()
    t_fixed: int = 300

    def to_dict(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "resample_method": self.resample_method,
            "frame": asdict(self.frame),
            "mfcc": asdict(self.mfcc),
            "t_fixed": self.t_fixed,
        }

    @staticmethod
    def from_dict(d: dict) -> "FeatureSettings":
        return FeatureSettings(
            sample_rate_hz=d["sample_rate_hz"],
            resample_method=d["resample_method"],
            frame=FrameConfig(**d["frame"]),
            mfcc=MfccConfig(**d["mfcc"]),
            t_fixed=d["t_fixed"],
        )


@dataclass
class Checkpoint:
    model_spec: ModelSpec
    params: dict  # name -> float32 array, model declaration order
    opt_acc: dict  # RMSProp accumulators, same keys (may be empty)
    features: FeatureSettings
    normalization: NormalizationProfile | None
    class_order: tuple = EMOTIONS
    metadata: dict = None

    def build_model(self) -> Model:
        model = Model(self.model_spec)
        model.set_parameters(self.params)
        return model


def _tensor_items(ckpt: Checkpoint) -> list:
    items = list(ckpt.params.items())
    items += [(f"rmsprop.{k}", v) for k, v in ckpt.opt_acc.items()]
    return items


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors = _tensor_items(ckpt)
    header = {
        "version": FORMAT_VERSION,
        "model_spec": ckpt.model_spec.to_dict(),
        "features": ckpt.features.to_dict(),
        "normalization": None if ckpt.normalization is None else {
            "mean": ckpt.normalization.mean.tolist(),
            "std": ckpt.normalization.std.tolist(),
        },
        "class_order": list(ckpt.class_order),
        "metadata": ckpt.metadata or {},
        "tensors": [{"name": n, "shape": list(v.shape)} for n, v in tensors],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for _, v in tensors)
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(head)) + head + body)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise CheckpointTruncatedError(f"{path}: header length field missing")
    (head_len,) = struct.unpack_from("<I", raw, 4)
    if len(raw) < 8 + head_len:
        raise CheckpointTruncatedError(
            f"{path}: expected {head_len} header bytes, got {len(raw) - 8}"
        )
    try:
        header = json.loads(raw[8:8 + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {header.get('version')!r}, expected {FORMAT_VERSION}"
        )

    expected = sum(int(np.prod(t["shape"])) * 4 for t in header["tensors"])
    actual = len(raw) - 8 - head_len
    if actual != expected:
        raise CheckpointTruncatedError(
            f"{path}: expected {expected} tensor bytes, got {actual}"
        )

    params, opt_acc = {}, {}
    offset = 8 + head_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        arr = arr.reshape(shape).copy()
        offset += count * 4
        name = entry["name"]
        if name.startswith("rmsprop."):
            opt_acc[name[len("rmsprop."):]] = arr
        else:
            params[name] = arr

    norm = header["normalization"]
    profile = None if norm is None else NormalizationProfile(
        mean=np.asarray(norm["mean"], dtype=np.float64),
        std=np.asarray(norm["std"], dtype=np.float64),
    )
    return Checkpoint(
        model_spec=ModelSpec.from_dict(header["model_spec"]),
        params=params,
        opt_acc=opt_acc,
        features=FeatureSettings.from_dict(header["features"]),
        normalization=profile,
        class_order=tuple(header["class_order"]),
        metadata=header["metadata"],
    )
