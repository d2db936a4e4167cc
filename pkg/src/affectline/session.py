"""Day-long session manifests: load, filter, classify, aggregate, report.

A session is described by a CSV manifest of labeled audio segments (one
file per segment). Only FAN segments (female adult, near) are treated
as approximations of the target speaker's speech and classified; the
far-field variant FAF is excluded because loudness skews the features.
Also provides a synthetic-session generator used as the test stand-in
for unavailable in-the-wild recordings.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import (EMOTION_INDEX, EMOTIONS, PIPELINE_SAMPLE_RATE,
                       AudioClip, AudioDecodeError, read_wav, write_wav)
from .checkpoint import Checkpoint
from .errors import DataError
from .features import assemble_features
from .svg import bar_chart

SOURCE_LABELS = ("FAN", "FAF", "MAN", "MAF", "CHN", "OTHER")

MANIFEST_COLUMNS = ("session_id", "segment_id", "source_label",
                    "audio_path", "start_s", "end_s")


class ManifestError(DataError):
    pass


class EmptySessionError(DataError):
    pass


@dataclass(frozen=True)
class SegmentRecord:
    session_id: str
    segment_id: str
    source_label: str
    audio_path: str
    start_s: float
    end_s: float


@dataclass
class ManifestLoadResult:
    records: list
    row_errors: list  # (line number, message)
    unknown_label_count: int


@dataclass
class SessionReport:
    """Emotion counts over the successfully classified FAN segments."""

    session_id: str
    counts: np.ndarray  # (6,) ints, canonical emotion order
    proportions: np.ndarray  # (6,) floats summing to 1
    n_segments_total: int
    n_segments_fan: int
    n_failed: int
    predictions: list = field(default_factory=list)  # (segment_id, label)


def load_manifest(path) -> ManifestLoadResult:
    """Parse a segment manifest CSV.

    Relative audio paths resolve against the manifest's directory.
    Unknown source labels map to OTHER (counted); rows that fail to parse
    are collected with their line numbers. Missing columns are fatal.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ManifestError(f"{path}: missing columns {', '.join(missing)}")
        records, row_errors, unknown = [], [], 0
        for row in reader:
            line = reader.line_num
            try:
                start_s = float(row["start_s"])
                end_s = float(row["end_s"])
            except (TypeError, ValueError):
                row_errors.append((line, "start_s/end_s not numeric"))
                continue
            if end_s <= start_s:
                row_errors.append((line, f"end_s {end_s} <= start_s {start_s}"))
                continue
            if not row["segment_id"] or not row["session_id"]:
                row_errors.append((line, "empty session_id or segment_id"))
                continue
            label = (row["source_label"] or "").strip().upper()
            if label not in SOURCE_LABELS:
                unknown += 1
                label = "OTHER"
            audio = Path(row["audio_path"])
            if not audio.is_absolute():
                audio = path.parent / audio
            records.append(SegmentRecord(
                session_id=row["session_id"],
                segment_id=row["segment_id"],
                source_label=label,
                audio_path=str(audio),
                start_s=start_s,
                end_s=end_s,
            ))
    return ManifestLoadResult(records=records, row_errors=row_errors,
                              unknown_label_count=unknown)


def filter_fan(records) -> list:
    """FAN segments only, original order preserved; idempotent."""
    return [r for r in records if r.source_label == "FAN"]


def checkpoint_predictor(ckpt: Checkpoint, chunk_vote: bool = False):
    """Build a (record, clip) -> emotion callable from a trained checkpoint.

    With ``chunk_vote`` the clip is cut into feature-window-sized chunks
    that vote by majority (ties to the lowest class index); otherwise
    classification uses the leading window only, matching the feature
    truncation rule.
    """
    model = ckpt.build_model()
    st = ckpt.features
    window = (st.t_fixed - 1) * st.frame.hop_samples + st.frame.frame_len_samples

    def classify_samples(samples) -> int:
        clip = AudioClip(samples=samples, sample_rate_hz=st.sample_rate_hz,
                         source_path="<segment>")
        fm = assemble_features(clip, st.frame, st.mfcc, st.t_fixed, ckpt.normalization)
        logits = model.forward(fm.values[None, ...])
        return int(np.argmax(logits[0]))

    def predict(record, clip: AudioClip) -> str:
        if not chunk_vote or len(clip.samples) <= window:
            return EMOTIONS[classify_samples(clip.samples)]
        votes = np.zeros(len(EMOTIONS), dtype=np.int64)
        for start in range(0, len(clip.samples), window):
            chunk = clip.samples[start:start + window]
            if len(chunk) < st.frame.frame_len_samples:
                break
            votes[classify_samples(chunk)] += 1
        return EMOTIONS[int(np.argmax(votes))]

    return predict


def classify_session(ckpt: Checkpoint | None, records, *,
                     predict=None, chunk_vote: bool = False) -> SessionReport:
    """Classify every FAN segment of one session and aggregate counts.

    ``predict`` overrides the checkpoint-based classifier (used by the
    synthetic-session harness). Unreadable segments are counted in
    ``n_failed`` and excluded from the proportions; a session with zero
    classifiable FAN segments is an error.
    """
    records = list(records)
    session_ids = {r.session_id for r in records}
    if len(session_ids) > 1:
        raise DataError(f"records span multiple sessions: {sorted(session_ids)}")
    if predict is None:
        if ckpt is None:
            raise DataError("classify_session needs a checkpoint or a predict callable")
        predict = checkpoint_predictor(ckpt, chunk_vote=chunk_vote)
    if ckpt is not None:
        target_rate = ckpt.features.sample_rate_hz
        resample_method = ckpt.features.resample_method
    else:
        target_rate, resample_method = PIPELINE_SAMPLE_RATE, "sinc"

    fan = filter_fan(records)
    counts = np.zeros(len(EMOTIONS), dtype=np.int64)
    predictions = []
    n_failed = 0
    for record in fan:
        try:
            clip = read_wav(record.audio_path, target_rate=target_rate,
                            resample_method=resample_method)
        except AudioDecodeError:
            n_failed += 1
            continue
        label = predict(record, clip)
        counts[EMOTION_INDEX[label]] += 1
        predictions.append((record.segment_id, label))
    total = int(counts.sum())
    if total == 0:
        raise EmptySessionError(
            f"session {next(iter(session_ids), '?')}: no classifiable FAN segments "
            f"({len(fan)} FAN rows, {n_failed} unreadable)"
        )
    return SessionReport(
        session_id=next(iter(session_ids)),
        counts=counts,
        proportions=counts / total,
        n_segments_total=len(records),
        n_segments_fan=len(fan),
        n_failed=n_failed,
        predictions=predictions,
    )


def render_report(report: SessionReport, out_dir) -> list:
    """Write ``<session_id>.csv`` and ``<session_id>.svg``; returns the paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{report.session_id}.csv"
        lines = ["emotion,count,proportion"]
        for i, name in enumerate(EMOTIONS):
            lines.append(f"{name},{int(report.counts[i])},{report.proportions[i]:.6f}")
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        svg_path = out_dir / f"{report.session_id}.svg"
        svg_path.write_text(
            bar_chart(EMOTIONS, report.proportions,
                      f"Session {report.session_id}: emotion distribution "
                      f"({int(report.counts.sum())} segments)",
                      "proportion"),
            encoding="utf-8",
        )
    except OSError as exc:
        raise DataError(f"cannot write report under {out_dir}: {exc}") from exc
    return [csv_path, svg_path]


@dataclass
class SynthesizedSession:
    manifest_path: Path
    truth_path: Path
    segment_paths: list


def synthesize_session(labeled_clips, out_dir, session_id: str = "synthetic",
                       snr_db: float | None = None, seed: int = 0) -> SynthesizedSession:
    """Emit a FAN-labeled session bundle from (AudioClip, emotion) pairs.

    Writes one 16-bit WAV per clip (optionally with white noise mixed at
    ``snr_db``), a manifest CSV, and a ground-truth sidecar CSV. Output
    bytes are a pure function of (inputs, session_id, snr_db, seed).
    """
    labeled_clips = list(labeled_clips)
    if not labeled_clips:
        raise DataError("need at least one labeled clip")
    out_dir = Path(out_dir)
    seg_dir = out_dir / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    manifest = ["session_id,segment_id,source_label,audio_path,start_s,end_s"]
    truth = ["segment_id,emotion"]
    segment_paths = []
    cursor = 0.0
    for i, (clip, label) in enumerate(labeled_clips):
        samples = np.asarray(clip.samples, dtype=np.float64)
        if snr_db is not None:
            signal_rms = float(np.sqrt(np.mean(samples ** 2)))
            if signal_rms > 0:
                noise = rng.standard_normal(len(samples))
                noise *= (signal_rms / (10.0 ** (snr_db / 20.0))) \
                    / float(np.sqrt(np.mean(noise ** 2)))
                samples = np.clip(samples + noise, -1.0, 1.0)
        segment_id = f"{session_id}-{i:05d}"
        wav_path = seg_dir / f"{segment_id}.wav"
        write_wav(wav_path, samples, clip.sample_rate_hz)
        segment_paths.append(wav_path)
        duration = len(samples) / clip.sample_rate_hz
        manifest.append(f"{session_id},{segment_id},FAN,"
                        f"segments/{segment_id}.wav,{cursor:.6f},{cursor + duration:.6f}")
        truth.append(f"{segment_id},{label}")
        cursor += duration

    manifest_path = out_dir / "manifest.csv"
    manifest_path.write_text("\n".join(manifest) + "\n", encoding="utf-8")
    truth_path = out_dir / "truth.csv"
    truth_path.write_text("\n".join(truth) + "\n", encoding="utf-8")
    return SynthesizedSession(manifest_path=manifest_path, truth_path=truth_path,
                              segment_paths=segment_paths)


def load_truth(path) -> dict:
    """segment_id -> emotion from a ground-truth sidecar CSV."""
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["segment_id"]] = row["emotion"]
    return out


def sample_for_audit(records, n: int, seed: int = 0) -> list:
    """Deterministic random sample of segments for manual listening."""
    records = list(records)
    rng = np.random.default_rng(seed)
    if n >= len(records):
        return records
    idx = rng.choice(len(records), size=n, replace=False)
    return [records[i] for i in sorted(int(i) for i in idx)]
