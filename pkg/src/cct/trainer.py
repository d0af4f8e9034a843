"""Mini-batch training, evaluation and history recording.

Every random draw in a run comes from ``RngStream(seed, key)`` children:
one for weight init and one per epoch (split again into the shuffle and
the dropout masks). Adding epochs therefore never changes earlier ones,
and two runs with the same inputs and seed produce identical histories.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .datasplit import LabeledDataset, SplitPlan, load_image, merge, policy2
from .errors import ConfigError, DataError, ParameterError, UsageError
from .model import CctConfig, forward, init_params, plan_tokenizer
from .model.checkpoint import load_checkpoint, save_checkpoint
from .numerics import RngStream, cross_entropy, resolve_dtype

OPTIMIZERS = ("adamw", "sgd_momentum")
HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds")

# child-stream keys under the run seed
_INIT, _EPOCH = 1, 2
_SHUFFLE, _DROPOUT = 0, 1

__all__ = [
    "AdamW", "EpochRecord", "ImageStore", "SgdMomentum", "TrainConfig", "TrainHistory",
    "evaluate", "load_checkpoint", "make_optimizer", "predict_scores", "run_policy2",
    "save_checkpoint", "train",
]


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adamw"
    learning_rate: float = 5e-4
    weight_decay: float = 3e-2
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    patience: int | None = None
    precision: str = "fp64"
    warmup_steps: int = 0
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ParameterError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        # zero is allowed so a run can be audited as an exact no-op
        if not self.learning_rate >= 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ParameterError(f"batch_size must be a positive integer, got {self.batch_size}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ParameterError(f"epochs must be a positive integer, got {self.epochs}")
        if self.patience is not None and self.patience < 1:
            raise ParameterError(f"patience must be >= 1 when set, got {self.patience}")
        if self.precision not in ("fp64", "fp32"):
            raise ParameterError(f"precision must be fp64 or fp32, got {self.precision!r}")
        if self.warmup_steps < 0 or self.eval_batch_size < 1:
            raise ParameterError("warmup_steps must be >= 0 and eval_batch_size >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ParameterError(f"seed must be a non-negative integer, got {self.seed!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"invalid train config: {exc}") from exc


# -- optimizers ---------------------------------------------------------------

class SgdMomentum:
    """Heavy-ball SGD: v = mu*v + g; p -= lr*v. No weight decay."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.steps = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad
            t.data -= lr * v
        self.steps += 1


class AdamW:
    """Adam with decoupled weight decay applied to every parameter."""

    def __init__(self, params: dict, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.steps = 0

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for name, t in self.params.items():
            if t.grad is None:
                continue
            g = t.grad
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                t.data *= 1.0 - lr * self.weight_decay
            t.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(params: dict, tconfig: TrainConfig):
    if tconfig.optimizer == "adamw":
        return AdamW(params, tconfig.learning_rate, tconfig.weight_decay,
                     tconfig.beta1, tconfig.beta2, tconfig.eps)
    return SgdMomentum(params, tconfig.learning_rate, tconfig.momentum)


def scheduled_lr(tconfig: TrainConfig, step: int) -> float:
    """Constant rate after an optional linear warmup over ``warmup_steps``."""
    if tconfig.warmup_steps and step < tconfig.warmup_steps:
        return tconfig.learning_rate * (step + 1) / tconfig.warmup_steps
    return tconfig.learning_rate


# -- data --------------------------------------------------------------------

class ImageStore:
    """Decoded, resized images by sample id, loaded lazily and cached.

    Batches are assembled in the order of the ids requested, whatever order
    the underlying files were decoded in.
    """

    def __init__(self, dataset: LabeledDataset | None = None, image_size=(256, 256),
                 channels: int = 1, normalize: dict | None = None, dtype="fp64"):
        self.image_size = tuple(image_size)
        self.channels = channels
        self.normalize = normalize
        self.dtype = resolve_dtype(dtype)
        self._samples = dataset.by_id() if dataset is not None else {}
        self._labels = {k: s.label for k, s in self._samples.items()}
        self._cache: dict = {}

    @classmethod
    def from_arrays(cls, ids: Sequence[str], images: np.ndarray, labels: Sequence[int],
                    dtype="fp64") -> "ImageStore":
        images = np.asarray(images)
        if images.ndim != 4 or len(images) != len(ids) or len(labels) != len(ids):
            raise UsageError("from_arrays needs images (N, C, H, W) with N ids and N labels")
        store = cls(None, images.shape[2:], images.shape[1], None, dtype)
        for i, img, y in zip(ids, images, labels):
            store._cache[i] = np.asarray(img, dtype=store.dtype)
            store._labels[i] = int(y)
        return store

    @classmethod
    def for_config(cls, dataset: LabeledDataset, config: CctConfig, normalize=None, dtype="fp64"):
        return cls(dataset, config.image_size, config.in_channels, normalize, dtype)

    @property
    def ids(self) -> list:
        return list(self._labels)

    def label(self, sample_id: str) -> int:
        try:
            return self._labels[sample_id]
        except KeyError:
            raise DataError(f"sample id {sample_id!r} is not in the dataset") from None

    def image(self, sample_id: str) -> np.ndarray:
        if sample_id not in self._cache:
            if sample_id not in self._samples:
                raise DataError(f"sample id {sample_id!r} is not in the dataset")
            t = load_image(self._samples[sample_id], self.image_size, self.channels,
                           self.normalize, self.dtype)
            self._cache[sample_id] = t.data
        return self._cache[sample_id]

    def batch(self, ids: Sequence[str]):
        images = np.stack([self.image(i) for i in ids])
        labels = np.array([self.label(i) for i in ids], dtype=np.int64)
        return images, labels

    def check_ids(self, ids) -> None:
        missing = [i for i in ids if i not in self._labels]
        if missing:
            raise DataError(f"{len(missing)} plan ids are not in the dataset, e.g. {missing[0]!r}")


# -- history -----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float | None = None
    val_acc: float | None = None
    seconds: float | None = None
    # training-pass predictions in visit order, kept for auditing accuracy
    train_predictions: list = field(default_factory=list, repr=False)
    train_labels: list = field(default_factory=list, repr=False)

    def row(self) -> list:
        return [str(self.epoch)] + [_fmt(getattr(self, c)) for c in HISTORY_COLUMNS[1:]]


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    run: dict = field(default_factory=dict)
    stopped_early: bool = False

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise UsageError("history epochs must strictly increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.run:
            buf.write("# run " + json.dumps(self.run, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow(r.row())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"run": self.run, "stopped_early": self.stopped_early,
                           "records": [{c: getattr(r, c) for c in HISTORY_COLUMNS}
                                       for r in self.records]},
                          indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_csv(cls, text: str, source: str = "<history>") -> "TrainHistory":
        """Parse a history CSV; errors name the offending line."""
        lines = text.splitlines()
        run, start = {}, 0
        if lines and lines[0].startswith("# run "):
            try:
                run = json.loads(lines[0][6:])
            except json.JSONDecodeError:
                raise DataError(f"{source}:1: malformed run manifest comment") from None
            start = 1
        rows = list(csv.reader(lines[start:]))
        if not rows or tuple(rows[0]) != HISTORY_COLUMNS:
            raise DataError(f"{source}:{start + 1}: expected header {','.join(HISTORY_COLUMNS)}")
        hist = cls(run=run)
        for offset, row in enumerate(rows[1:], start=start + 2):
            if len(row) != len(HISTORY_COLUMNS):
                raise DataError(f"{source}:{offset}: expected {len(HISTORY_COLUMNS)} columns, "
                                f"got {len(row)}")
            try:
                epoch = int(row[0])
                vals = [float(v) if v != "" else None for v in row[1:]]
            except ValueError:
                raise DataError(f"{source}:{offset}: non-numeric value in {row}") from None
            if vals[0] is None or vals[1] is None:
                raise DataError(f"{source}:{offset}: train_loss and train_acc are required")
            try:
                hist.append(EpochRecord(epoch, *vals))
            except UsageError:
                raise DataError(f"{source}:{offset}: epoch {epoch} does not increase") from None
        return hist


# -- core loop ---------------------------------------------------------------

def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_scores(params: dict, config: CctConfig, store: ImageStore, ids: Sequence[str],
                   batch_size: int = 64):
    """Inference-mode logits for ``ids`` in order, plus their labels."""
    logits, labels = [], []
    for lo in range(0, len(ids), batch_size):
        images, y = store.batch(ids[lo:lo + batch_size])
        logits.append(forward(images, params, config, training=False).data)
        labels.append(y)
    return np.concatenate(logits), np.concatenate(labels)


def _loss_and_predictions(logits: np.ndarray, labels: np.ndarray):
    probs = _softmax_np(logits)
    loss = float(-np.mean(np.log(np.maximum(probs[np.arange(len(labels)), labels], 1e-300))))
    return loss, np.argmax(logits, axis=1)


def _accuracy(predictions, labels) -> float:
    cm = metrics.confusion(list(predictions), list(labels), positive=1)
    return float(metrics.scalar_metrics(cm).accuracy)


def evaluate(params: dict, config: CctConfig, store: ImageStore, ids: Sequence[str],
             batch_size: int = 64, with_macro: bool = False):
    """Metrics report and ROC curve for ``ids``; never mutates ``params``.

    The predicted class is the argmax of the logits; ROC uses the softmax
    probability of the positive class. A single-category subset yields a
    report without ROC (and a warning).
    """
    ids = list(ids)
    if not ids:
        raise UsageError("evaluate() needs at least one sample")
    logits, labels = predict_scores(params, config, store, ids, batch_size)
    predictions = np.argmax(logits, axis=1)
    report = metrics.scalar_metrics(metrics.confusion(predictions.tolist(), labels.tolist(), 1),
                                    with_macro)
    scores = _softmax_np(logits)[:, 1]
    roc = None
    if labels.min() != labels.max():
        roc = metrics.roc_curve(scores, labels, 1)
        report.roc, report.auc_roc = roc, metrics.auc_exact(roc)
    else:
        warnings.warn("evaluation subset holds a single category; ROC/AUC omitted", stacklevel=2)
        report.undefined.append("auc_roc")
    return report, roc


def _as_store(data, config: CctConfig, dtype) -> ImageStore:
    if isinstance(data, ImageStore):
        return data
    if isinstance(data, LabeledDataset):
        return ImageStore.for_config(data, config, dtype=dtype)
    raise UsageError(f"data must be a LabeledDataset or ImageStore, got {type(data).__name__}")


def train(config: CctConfig, tconfig: TrainConfig, plan: SplitPlan, data,
          rng_key: tuple = (), val_ids: Sequence[str] | None = None, record_time: bool = False,
          params: dict | None = None, log=None):
    """Train a fresh model on ``plan.train_ids``; validate on ``plan.val_ids`` each epoch.

    ``val_ids`` overrides the plan's validation set. Wall-clock seconds are
    only written to the history when ``record_time`` is set, so that
    histories stay byte-identical across reruns by default.
    Returns ``(params, history)``.
    """
    plan_tokenizer(config)
    dtype = resolve_dtype(tconfig.precision)
    store = _as_store(data, config, dtype)
    train_ids = list(plan.train_ids)
    val_ids = list(plan.val_ids if val_ids is None else val_ids)
    if not train_ids:
        raise DataError("training set is empty")
    store.check_ids(train_ids + val_ids)

    root = RngStream(tconfig.seed, rng_key)
    if params is None:
        params = init_params(config, root.child(_INIT), dtype=dtype)
    opt = make_optimizer(params, tconfig)
    history = TrainHistory(run={"seed": tconfig.seed, "rng_key": list(rng_key),
                                "rng": RngStream.algorithm, "policy": plan.policy,
                                "fold": plan.fold, "train": tconfig.to_dict(),
                                "model": config.to_dict()})
    best, stale = np.inf, 0
    n = len(train_ids)
    for epoch in range(tconfig.epochs):
        started = time.perf_counter()
        stream = root.child(_EPOCH, epoch)
        order = stream.child(_SHUFFLE).permutation(n)
        drop = stream.child(_DROPOUT)
        loss_sum, preds, labels = 0.0, [], []
        for lo in range(0, n, tconfig.batch_size):
            batch_ids = [train_ids[i] for i in order[lo:lo + tconfig.batch_size]]
            images, y = store.batch(batch_ids)
            for t in params.values():
                t.grad = None
            logits = forward(images, params, config, rng=drop, training=True)
            loss = cross_entropy(logits, y)
            loss.backward()
            opt.step(scheduled_lr(tconfig, opt.steps))
            loss_sum += float(loss.data) * len(batch_ids)
            preds.extend(np.argmax(logits.data, axis=1).tolist())
            labels.extend(y.tolist())
        record = EpochRecord(epoch + 1, loss_sum / n, _accuracy(preds, labels),
                             train_predictions=preds, train_labels=labels)
        if val_ids:
            logits, y = predict_scores(params, config, store, val_ids, tconfig.eval_batch_size)
            record.val_loss, vpred = _loss_and_predictions(logits, y)
            record.val_acc = _accuracy(vpred.tolist(), y.tolist())
        if record_time:
            record.seconds = time.perf_counter() - started
        history.append(record)
        if log is not None:
            log(format_epoch(record))
        if tconfig.patience is not None:
            monitored = record.val_loss if record.val_loss is not None else record.train_loss
            if monitored < best:
                best, stale = monitored, 0
            else:
                stale += 1
                if stale >= tconfig.patience:
                    history.stopped_early = True
                    break
    return params, history


def format_epoch(r: EpochRecord) -> str:
    line = f"epoch {r.epoch}: train_loss {r.train_loss:.4f} train_acc {r.train_acc:.4f}"
    if r.val_loss is not None:
        line += f" val_loss {r.val_loss:.4f} val_acc {r.val_acc:.4f}"
    return line


# -- cross-validation --------------------------------------------------------

def _run_fold(args):
    config, tconfig, plan, store, fold = args
    params, history = train(config, tconfig, plan, store, rng_key=(fold,))
    report, _ = evaluate(params, config, store, plan.test_ids, tconfig.eval_batch_size)
    return report, history


def run_policy2(config: CctConfig, tconfig: TrainConfig, official_train: LabeledDataset,
                official_test: LabeledDataset, k: int = 10, seed: int = 0, jobs: int = 1,
                stratify: bool = True, store: ImageStore | None = None):
    """Train and test one fresh model per fold.

    Returns ``(fold_reports, aggregate)``: k reports plus their unweighted mean.
    Fold f draws from the stream keyed ``(f,)`` under ``tconfig.seed``, so the
    result is the same for any ``jobs``.
    """
    plans = policy2(official_train, official_test, k, seed, stratify)
    if store is None:
        store = ImageStore.for_config(merge(official_train, official_test), config,
                                      dtype=tconfig.precision)
    tasks = [(config, tconfig, plan, store, i) for i, plan in enumerate(plans)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    reports = [r for r, _ in results]
    return reports, metrics.aggregate_folds(reports)


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
