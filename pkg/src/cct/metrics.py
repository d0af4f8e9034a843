"""Binary classification metrics: confusion matrix, rate metrics, ROC and AUC.

Scalars are kept as exact :class:`fractions.Fraction` values and only turned
into floats or percentages at the reporting boundary. Percentages use
round-half-even on the exact value, so ``Fraction(99, 100)`` renders as
``99.00`` without float drift.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, UsageError

SCALAR_NAMES = ("accuracy", "precision", "recall", "f1", "auc_roc", "tpr", "fpr", "fnr", "tnr")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 0:
                raise UsageError(f"confusion count {name} must be a non-negative integer, got {value!r}")
            object.__setattr__(self, name, int(value))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    def as_grid(self) -> list:
        """Rows are the true class (positive first), columns the prediction."""
        return [[self.tp, self.fn], [self.fp, self.tn]]

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def confusion(predictions: Sequence, labels: Sequence, positive=1) -> ConfusionMatrix:
    """Count outcomes with ``positive`` as the infected class.

    FP is a negative sample predicted positive, FN a positive sample
    predicted negative.
    """
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise UsageError(f"predictions ({len(predictions)}) and labels ({len(labels)}) differ in length")
    if not labels:
        raise UsageError("confusion() needs at least one sample")
    tp = fp = fn = tn = 0
    for p, y in zip(predictions, labels):
        pred_pos, true_pos = p == positive, y == positive
        if true_pos:
            tp, fn = (tp + 1, fn) if pred_pos else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if pred_pos else (fp, tn + 1)
    return ConfusionMatrix(tp, fp, fn, tn)


def _ratio(num: int, den: int, name: str, undefined: list) -> Fraction:
    if den == 0:
        undefined.append(name)
        return Fraction(0)
    return Fraction(num, den)


def percent(value) -> Decimal:
    """``value`` x 100, rounded half-even to 2 decimals."""
    if isinstance(value, Fraction):
        scaled = Decimal(value.numerator * 100) / Decimal(value.denominator)
    else:
        scaled = Decimal(repr(float(value))) * 100
    return scaled.quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)


def percent_str(value) -> str:
    return str(percent(value))


@dataclass
class RocCurve:
    """Points run from (0, 0) at threshold +inf to (1, 1) at the lowest score."""

    thresholds: list
    fpr: list
    tpr: list

    def __post_init__(self):
        if not (len(self.thresholds) == len(self.fpr) == len(self.tpr)):
            raise UsageError("roc curve columns differ in length")

    def __len__(self):
        return len(self.fpr)

    @property
    def points(self) -> list:
        return list(zip(self.fpr, self.tpr))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, r in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(r))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, source: str = "<roc>") -> "RocCurve":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["threshold", "fpr", "tpr"]:
            raise DataError(f"{source}:1: expected header 'threshold,fpr,tpr'")
        th, fp, tp = [], [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if len(row) != 3:
                raise DataError(f"{source}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise DataError(f"{source}:{lineno}: non-numeric value in {row}") from None
            th.append(values[0])
            fp.append(Fraction(values[1]))
            tp.append(Fraction(values[2]))
        return cls(th, fp, tp)


def _binary_labels(labels, positive) -> np.ndarray:
    y = np.asarray(list(labels))
    return y == positive


def roc_curve(scores: Sequence[float], labels: Sequence, positive=1) -> RocCurve:
    """Sweep thresholds over distinct scores, highest first; ties share one point.

    A sample is predicted positive at threshold t when ``score >= t``.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = _binary_labels(labels, positive)
    if s.shape != pos.shape or s.ndim != 1:
        raise UsageError(f"scores {s.shape} and labels {pos.shape} must be equal-length vectors")
    if not np.all(np.isfinite(s)):
        raise DataError("roc_curve scores must be finite")
    n_pos = int(pos.sum())
    n_neg = int(pos.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_curve needs at least one sample of each category")

    order = np.argsort(-s, kind="stable")
    s_sorted, pos_sorted = s[order], pos[order]
    cum_tp = np.cumsum(pos_sorted)
    cum_fp = np.cumsum(~pos_sorted)
    # last index of every run of equal scores
    ends = np.flatnonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))

    thresholds = [math.inf] + [float(s_sorted[i]) for i in ends]
    fpr = [Fraction(0)] + [Fraction(int(cum_fp[i]), n_neg) for i in ends]
    tpr = [Fraction(0)] + [Fraction(int(cum_tp[i]), n_pos) for i in ends]
    return RocCurve(thresholds, fpr, tpr)


def auc_exact(curve: RocCurve) -> Fraction:
    """Trapezoidal area as an exact rational."""
    area = Fraction(0)
    for i in range(1, len(curve)):
        area += (Fraction(curve.fpr[i]) - Fraction(curve.fpr[i - 1])) \
            * (Fraction(curve.tpr[i]) + Fraction(curve.tpr[i - 1])) / 2
    return area


def auc(curve: RocCurve) -> float:
    return float(auc_exact(curve))


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    accuracy: Fraction
    precision: Fraction
    recall: Fraction
    f1: Fraction
    tpr: Fraction
    fpr: Fraction
    fnr: Fraction
    tnr: Fraction
    auc_roc: Fraction | None = None
    roc: RocCurve | None = None
    undefined: list = field(default_factory=list)
    macro: dict | None = None
    folds: int = 1

    def scalars(self) -> dict:
        return {name: getattr(self, name) for name in SCALAR_NAMES}

    def to_dict(self, run: dict | None = None) -> dict:
        """Flat JSON-ready object: 0-1 floats, ``*_pct`` strings, counts."""
        out = {}
        for name, value in self.scalars().items():
            out[name] = None if value is None else float(value)
            out[f"{name}_pct"] = None if value is None else percent_str(value)
        out.update(self.confusion.to_dict())
        out["total"] = self.confusion.total
        out["undefined"] = sorted(set(self.undefined))
        out["folds"] = self.folds
        out["positive_class_metrics"] = True
        if self.macro is not None:
            out["macro"] = {k: float(v) for k, v in self.macro.items()}
            out["macro_pct"] = {k: percent_str(v) for k, v in self.macro.items()}
        if run is not None:
            out["run"] = run
        return out


def scalar_metrics(cm: ConfusionMatrix, with_macro: bool = False) -> MetricsReport:
    """All rate metrics for the positive class, as exact fractions.

    A zero denominator yields 0 and the metric's name in ``undefined``.
    """
    if cm.total == 0:
        raise UsageError("scalar_metrics() needs at least one sample")
    undefined: list = []
    accuracy = Fraction(cm.tp + cm.tn, cm.total)
    precision = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    tpr = _ratio(cm.tp, cm.tp + cm.fn, "tpr", undefined)
    fnr = _ratio(cm.fn, cm.tp + cm.fn, "fnr", undefined)
    tnr = _ratio(cm.tn, cm.tn + cm.fp, "tnr", undefined)
    fpr = _ratio(cm.fp, cm.fp + cm.tn, "fpr", undefined)
    # 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN)
    f1 = _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn, "f1", undefined)
    if "tpr" in undefined:
        undefined.append("recall")
    report = MetricsReport(cm, accuracy, precision, tpr, f1, tpr, fpr, fnr, tnr,
                           undefined=undefined)
    if with_macro:
        report.macro = _macro(cm)
    return report


def _macro(cm: ConfusionMatrix) -> dict:
    """Unweighted mean over both classes, each taking a turn as positive."""
    flipped = ConfusionMatrix(cm.tn, cm.fn, cm.fp, cm.tp)
    scratch: list = []
    per_class = []
    for m in (cm, flipped):
        p = _ratio(m.tp, m.tp + m.fp, "precision", scratch)
        r = _ratio(m.tp, m.tp + m.fn, "recall", scratch)
        f = _ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn, "f1", scratch)
        per_class.append((p, r, f))
    return {name: (per_class[0][i] + per_class[1][i]) / 2
            for i, name in enumerate(("precision", "recall", "f1"))}


def evaluate_scores(scores: Sequence[float], labels: Sequence, threshold: float = 0.5,
                    positive=1, with_macro: bool = False) -> MetricsReport:
    """Threshold positive-class scores, then attach ROC/AUC when both classes occur."""
    s = np.asarray(scores, dtype=np.float64)
    pos = _binary_labels(labels, positive)
    predictions = np.where(s >= threshold, 1, 0)
    report = scalar_metrics(confusion(predictions.tolist(), pos.astype(int).tolist(), 1), with_macro)
    if pos.any() and not pos.all():
        report.roc = roc_curve(s, pos.astype(int), 1)
        report.auc_roc = auc_exact(report.roc)
    else:
        report.undefined.append("auc_roc")
    return report


def _mean(values: Iterable[Fraction]) -> Fraction:
    values = list(values)
    return sum(values, Fraction(0)) / len(values)


def aggregate_folds(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Unweighted mean of every scalar; confusion matrices summed; no ROC."""
    reports = list(reports)
    if not reports:
        raise UsageError("aggregate_folds() needs at least one report")
    if len(reports) == 1:
        return reports[0]
    kwargs = {}
    for name in SCALAR_NAMES:
        values = [getattr(r, name) for r in reports]
        kwargs[name] = None if any(v is None for v in values) else _mean(values)
    cm = reports[0].confusion
    for r in reports[1:]:
        cm = cm + r.confusion
    undefined = sorted({u for r in reports for u in r.undefined})
    macro = None
    if all(r.macro is not None for r in reports):
        macro = {k: _mean(r.macro[k] for r in reports) for k in reports[0].macro}
    return MetricsReport(cm, undefined=undefined, macro=macro, folds=len(reports), **kwargs)


def mean_percent(values_pct: Sequence) -> Decimal:
    """Mean of already-rendered percentages (e.g. per-fold table cells)."""
    fracs = [Fraction(Decimal(str(v))) for v in values_pct]
    return percent(_mean(fracs) / 100)
