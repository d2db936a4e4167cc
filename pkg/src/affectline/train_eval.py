"""Dataset splitting, the training loop, metrics, and persistence glue.

Corpus records are (audio path, emotion label) pairs. Feature matrices
are extracted once per file (optionally disk-cached, keyed by content
and configuration hashes) and normalization statistics come from the
training split only.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import EMOTION_INDEX, EMOTIONS, AudioDecodeError, read_wav
from .checkpoint import Checkpoint, FeatureSettings, load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, DivergenceError
from .features import FeatureMatrix, assemble_features, compute_normalization
from .nn import Model, ModelSpec, RmsProp, softmax_xent

__all__ = [
    "TrainConfig", "EpochStats", "Metrics", "split_dataset", "train", "evaluate",
    "extract_all", "metrics_to_csv", "confusion_to_csv", "save_checkpoint",
    "load_checkpoint", "default_cache_dir",
]


class SplitError(DataError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 25
    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-8
    seed: int = 42
    split_ratio: float = 0.8  # train fraction
    stratified: bool = True
    shuffle_each_epoch: bool = True
    early_stop_train_acc: float = 0.0  # 0 disables
    patience: int = 0  # epochs without test-accuracy improvement; 0 disables

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    train_acc: float
    test_acc: float
    train_loss: float


@dataclass
class Metrics:
    epochs: list = field(default_factory=list)
    confusion: np.ndarray = None  # 6x6 int, rows = true class
    n_train: int = 0
    n_test: int = 0

    @property
    def accuracy(self) -> float:
        total = int(self.confusion.sum())
        return float(np.trace(self.confusion)) / total if total else 0.0


def split_dataset(records, config: TrainConfig):
    """Stratified train/test split of (path, label) records.

    Per class, round((1 - split_ratio) * n) records go to test. The split
    is a pure function of (records order, seed); both sides preserve the
    input's relative ordering.
    """
    records = list(records)
    rng = np.random.default_rng(config.seed)
    test_idx = set()
    if config.stratified:
        by_class = {}
        for i, (_, label) in enumerate(records):
            by_class.setdefault(label, []).append(i)
        for label, idxs in by_class.items():
            if len(idxs) < 2:
                raise SplitError(f"class {label!r} has {len(idxs)} record(s); need >= 2")
        for label in sorted(by_class, key=lambda l: (EMOTION_INDEX.get(l, len(EMOTIONS)), l)):
            idxs = by_class[label]
            n_test = round(len(idxs) * (1.0 - config.split_ratio))
            perm = rng.permutation(len(idxs))
            test_idx.update(idxs[p] for p in perm[:n_test])
    else:
        n_test = round(len(records) * (1.0 - config.split_ratio))
        perm = rng.permutation(len(records))
        test_idx.update(int(p) for p in perm[:n_test])
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


# ---------------------------------------------------------------------------
# Feature extraction with content-addressed caching
# ---------------------------------------------------------------------------

def default_cache_dir() -> Path:
    env = os.environ.get("AFFECTLINE_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "affectline"


def _settings_token(settings: FeatureSettings) -> str:
    blob = json.dumps(settings.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def extract_features(path, settings: FeatureSettings,
                     cache_dir: Path | None = None) -> FeatureMatrix:
    """Extract the raw (unnormalized) feature matrix for one file.

    With ``cache_dir`` set, results are stored keyed by (file content
    hash, settings hash); normalization always happens downstream so the
    cache is split-independent.
    """
    if cache_dir is not None:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:20]
        key = f"{digest}-{_settings_token(settings)}.npz"
        cached = Path(cache_dir) / key
        if cached.exists():
            with np.load(cached) as z:
                return FeatureMatrix(values=z["values"], n_valid_frames=int(z["n_valid"]))
    clip = read_wav(path, target_rate=settings.sample_rate_hz,
                    resample_method=settings.resample_method)
    fm = assemble_features(clip, settings.frame, settings.mfcc, settings.t_fixed)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        tmp = cached.parent / f"{cached.stem}.{os.getpid()}.tmp.npz"
        with open(tmp, "wb") as fh:
            np.savez(fh, values=fm.values, n_valid=fm.n_valid_frames)
        os.replace(tmp, cached)  # atomic under concurrent extraction
    return fm


def _extract_worker(args):
    path, settings, cache_dir = args
    try:
        return extract_features(path, settings, cache_dir), None
    except AudioDecodeError as exc:
        return None, str(exc)


def extract_all(records, settings: FeatureSettings, cache_dir=None, jobs: int = 1):
    """Feature matrices for (path, label) records, in record order.

    Returns (kept records, matrices, failures); decode failures are
    collected rather than fatal.
    """
    tasks = [(path, settings, cache_dir) for path, _ in records]
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_extract_worker, tasks, chunksize=4))
    else:
        results = [_extract_worker(t) for t in tasks]
    kept, matrices, failures = [], [], []
    for record, (fm, err) in zip(records, results):
        if fm is None:
            failures.append((record[0], err))
        else:
            kept.append(record)
            matrices.append(fm)
    return kept, matrices, failures


def _to_batch_array(matrices, profile) -> np.ndarray:
    out = np.stack([
        profile.apply(m.values.astype(np.float64), m.n_valid_frames) if profile else m.values
        for m in matrices
    ])
    return out.astype(np.float32)


def _labels_array(records) -> np.ndarray:
    return np.array([EMOTION_INDEX[label] for _, label in records], dtype=np.int64)


def predict_logits(model: Model, x: np.ndarray, batch: int = 64) -> np.ndarray:
    chunks = [model.forward(x[i:i + batch]) for i in range(0, len(x), batch)]
    return np.concatenate(chunks) if chunks else np.zeros((0, model.spec.n_classes))


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray,
                     n_classes: int = len(EMOTIONS)) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _accuracy(model: Model, x: np.ndarray, y: np.ndarray) -> float:
    if len(x) == 0:
        return float("nan")
    pred = predict_logits(model, x).argmax(axis=1)
    return float(np.mean(pred == y))


def train(records, model_spec: ModelSpec, config: TrainConfig,
          settings: FeatureSettings = FeatureSettings(),
          cache_dir=None, jobs: int = 1, on_normalization=None):
    """Train a model on (path, label) records; returns (Checkpoint, Metrics).

    Splits internally, extracts features, computes the normalization
    profile on the training split, then runs epochs x ceil(N/batch)
    RMSProp steps with per-epoch accuracy bookkeeping. A non-finite loss
    aborts with DivergenceError naming the epoch and batch.
    """
    train_recs, test_recs = split_dataset(records, config)
    train_recs, train_mats, train_fail = extract_all(train_recs, settings, cache_dir, jobs)
    test_recs, test_mats, test_fail = extract_all(test_recs, settings, cache_dir, jobs)
    if not train_recs:
        raise DataError("training split is empty after decode failures")

    profile = compute_normalization(train_mats)
    if on_normalization is not None:
        on_normalization([path for path, _ in train_recs])

    x_train = _to_batch_array(train_mats, profile)
    y_train = _labels_array(train_recs)
    x_test = _to_batch_array(test_mats, profile) if test_mats else np.zeros(
        (0, model_spec.in_channels, model_spec.in_frames), dtype=np.float32)
    y_test = _labels_array(test_recs) if test_recs else np.zeros(0, dtype=np.int64)

    model = Model(model_spec, seed=np.random.SeedSequence([config.seed, 101]))
    optimizer = RmsProp(lr=config.lr, rho=config.rho, eps=config.eps)
    shuffle_rng = np.random.default_rng([config.seed, 202])

    metrics = Metrics(n_train=len(train_recs), n_test=len(test_recs))
    n = len(x_train)
    best_test, since_best = -1.0, 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n) if config.shuffle_each_epoch else np.arange(n)
        loss_sum = 0.0
        for batch_idx, start in enumerate(range(0, n, config.batch_size)):
            sel = order[start:start + config.batch_size]
            logits = model.forward(x_train[sel])
            losses, grad = softmax_xent(logits, y_train[sel])
            mean_loss = float(losses.mean())
            if not np.isfinite(mean_loss):
                raise DivergenceError(epoch, batch_idx, mean_loss)
            grads = model.backward((grad / len(sel)).astype(np.float32))
            optimizer.step(model.parameters(), grads)
            loss_sum += mean_loss * len(sel)
        train_acc = _accuracy(model, x_train, y_train)
        test_acc = _accuracy(model, x_test, y_test)
        metrics.epochs.append(EpochStats(epoch, train_acc, test_acc, loss_sum / n))

        if config.early_stop_train_acc and train_acc >= config.early_stop_train_acc:
            break
        if config.patience and len(y_test):
            if test_acc > best_test:
                best_test, since_best = test_acc, 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break

    if len(y_test):
        y_pred = predict_logits(model, x_test).argmax(axis=1)
        metrics.confusion = confusion_matrix(y_test, y_pred)
    else:
        metrics.confusion = np.zeros((len(EMOTIONS), len(EMOTIONS)), dtype=np.int64)

    ckpt = Checkpoint(
        model_spec=model_spec,
        params={name: arr.copy() for name, arr in model.parameters()},
        opt_acc={name: acc.copy() for name, acc in optimizer.acc.items()},
        features=settings,
        normalization=profile,
        class_order=EMOTIONS,
        metadata={
            "seed": config.seed,
            "epochs_requested": config.epochs,
            "epochs_run": len(metrics.epochs),
            "batch_size": config.batch_size,
            "lr": config.lr,
            "n_train": len(train_recs),
            "n_test": len(test_recs),
            "decode_failures": len(train_fail) + len(test_fail),
            "final_train_acc": metrics.epochs[-1].train_acc if metrics.epochs else None,
            "final_test_acc": metrics.epochs[-1].test_acc if metrics.epochs else None,
        },
    )
    return ckpt, metrics


def evaluate(ckpt: Checkpoint, records, cache_dir=None, jobs: int = 1,
             settings_override: FeatureSettings | None = None) -> Metrics:
    """Confusion matrix and accuracy of a checkpoint over (path, label) records.

    Features are extracted with the checkpoint's own settings; passing a
    conflicting override raises ConfigError. An empty record list is an
    error rather than a NaN accuracy.
    """
    records = list(records)
    if not records:
        raise DataError("no records to evaluate")
    if settings_override is not None and settings_override != ckpt.features:
        raise ConfigError("feature settings differ from the checkpoint's; "
                          "re-extract with the checkpoint configuration")
    kept, mats, failures = extract_all(records, ckpt.features, cache_dir, jobs)
    if not kept:
        raise DataError("all records failed to decode")
    x = _to_batch_array(mats, ckpt.normalization)
    y = _labels_array(kept)
    model = ckpt.build_model()
    y_pred = predict_logits(model, x).argmax(axis=1)
    return Metrics(
        epochs=[],
        confusion=confusion_matrix(y, y_pred),
        n_train=0,
        n_test=len(kept),
    )


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def metrics_to_csv(metrics: Metrics) -> str:
    lines = ["epoch,train_acc,test_acc,train_loss"]
    for e in metrics.epochs:
        lines.append(f"{e.epoch},{e.train_acc:.6f},{e.test_acc:.6f},{e.train_loss:.6f}")
    return "\n".join(lines) + "\n"


def confusion_to_csv(cm: np.ndarray) -> str:
    lines = ["true_label," + ",".join(EMOTIONS)]
    for i, name in enumerate(EMOTIONS):
        lines.append(name + "," + ",".join(str(int(v)) for v in cm[i]))
    return "\n".join(lines) + "\n"
