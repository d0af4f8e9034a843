"""Manifest ingestion, image loading and the three train/test split policies.

A manifest is a CSV file with header ``path,label`` where label is
``positive`` or ``negative``. Sample ids are the manifest path strings,
so plans stay readable and portable across machines.

Randomness comes from :class:`~cct.numerics.RngStream` child streams keyed
by purpose and class label, so each policy's draws are independent of
every other consumer of the same seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, ROUND_HALF_EVEN, Decimal
from pathlib import Path, PurePosixPath
from typing import Sequence

import numpy as np

from .errors import DataError, UsageError
from .numerics import RngStream, Tensor

POSITIVE, NEGATIVE = 1, 0
LABEL_NAMES = {"positive": POSITIVE, "negative": NEGATIVE}
LABEL_TEXT = {v: k for k, v in LABEL_NAMES.items()}
ORIGINS = ("official_train", "official_test", "merged")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
PLAN_FORMAT = "cct-split-plan"
PLAN_VERSION = 1

# child-stream keys
_SHUFFLE, _POLICY1, _POLICY2, _POLICY3 = 1, 2, 3, 4


@dataclass(frozen=True)
class Sample:
    sample_id: str
    path: Path
    label: int


@dataclass(frozen=True)
class LabeledDataset:
    samples: tuple
    origin: str = "official_train"

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.origin not in ORIGINS:
            raise UsageError(f"unknown dataset origin {self.origin!r}")
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("dataset contains duplicate sample ids")
        bad = {s.label for s in self.samples} - {POSITIVE, NEGATIVE}
        if bad:
            raise DataError(f"labels must be 0/1, found {sorted(bad)}")

    def __len__(self):
        return len(self.samples)

    @property
    def ids(self) -> list:
        return [s.sample_id for s in self.samples]

    def class_counts(self) -> dict:
        counts = {"positive": 0, "negative": 0}
        for s in self.samples:
            counts[LABEL_TEXT[s.label]] += 1
        return counts

    def by_id(self) -> dict:
        return {s.sample_id: s for s in self.samples}

    def subset(self, ids: Sequence[str]) -> "LabeledDataset":
        index = self.by_id()
        missing = [i for i in ids if i not in index]
        if missing:
            raise DataError(f"{len(missing)} plan ids not in dataset, e.g. {missing[0]!r}")
        return LabeledDataset([index[i] for i in ids], self.origin)


def merge(*datasets: LabeledDataset) -> LabeledDataset:
    samples = [s for d in datasets for s in d.samples]
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids):
        seen, dup = set(), None
        for i in ids:
            if i in seen:
                dup = i
                break
            seen.add(i)
        raise DataError(f"datasets overlap: sample id {dup!r} appears in more than one")
    return LabeledDataset(samples, "merged")


# -- ingestion ---------------------------------------------------------------

def ingest(manifest_path, origin: str = "official_train", check_files: bool = True) -> LabeledDataset:
    """Read a ``path,label`` manifest. Image paths resolve relative to the manifest."""
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc.strerror}") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows or [c.strip() for c in rows[0]] != ["path", "label"]:
        raise DataError(f"{manifest_path}:1: header must be 'path,label'")
    root = manifest_path.parent
    samples, seen = [], {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DataError(f"{manifest_path}:{lineno}: expected 2 columns, got {len(row)}")
        rel, label = row[0].strip(), row[1].strip()
        if label not in LABEL_NAMES:
            raise DataError(f"{manifest_path}:{lineno}: unknown label {label!r} "
                            f"(expected 'positive' or 'negative')")
        if rel in seen:
            raise DataError(f"{manifest_path}:{lineno}: duplicate path {rel!r} "
                            f"(first seen on line {seen[rel]})")
        seen[rel] = lineno
        path = root / rel
        if check_files:
            if not path.is_file():
                raise DataError(f"{manifest_path}:{lineno}: missing file {rel!r}")
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                raise DataError(f"{manifest_path}:{lineno}: {rel!r} is not a PNG or JPEG file")
        samples.append(Sample(str(PurePosixPath(*Path(rel).parts)), path, LABEL_NAMES[label]))
    return LabeledDataset(samples, origin)


def write_manifest(path, entries: Sequence[tuple]) -> None:
    """Write ``(relative_path, label_text)`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label"])
        w.writerows(entries)


def _bilinear_axis(n_in: int, n_out: int):
    """Source index pairs and weights for half-pixel-centred resampling."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(image: np.ndarray, size: tuple) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, C) array, edges clamped."""
    h_out, w_out = size
    h_in, w_in = image.shape[:2]
    if (h_in, w_in) == (h_out, w_out):
        return image.astype(np.float64, copy=True)
    img = image.astype(np.float64)
    r0, r1, rw = _bilinear_axis(h_in, h_out)
    c0, c1, cw = _bilinear_axis(w_in, w_out)
    extra = (1,) * (img.ndim - 2)
    rw = rw.reshape((-1, 1) + extra)
    cw = cw.reshape((1, -1) + extra)
    top = img[r0][:, c0] * (1 - cw) + img[r0][:, c1] * cw
    bottom = img[r1][:, c0] * (1 - cw) + img[r1][:, c1] * cw
    return top * (1 - rw) + bottom * rw


def load_image(sample, target_size=(256, 256), channels: int = 1,
               normalize: dict | None = None, dtype="fp64") -> Tensor:
    """Decode, convert to grayscale or RGB, resize, scale to [0, 1]; shape (C, H, W)."""
    from PIL import Image, UnidentifiedImageError

    path = sample.path if isinstance(sample, Sample) else Path(sample)
    if channels not in (1, 3):
        raise UsageError(f"channels must be 1 or 3, got {channels}")
    try:
        with Image.open(path) as im:
            im = im.convert("L" if channels == 1 else "RGB")
            arr = np.asarray(im, dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from None
    arr = resize_bilinear(arr, tuple(target_size)) / 255.0
    arr = arr[None] if channels == 1 else np.transpose(arr, (2, 0, 1))
    if normalize:
        arr = (arr - float(normalize.get("mean", 0.0))) / float(normalize.get("std", 1.0))
    return Tensor(np.ascontiguousarray(arr), dtype=dtype)


# -- plans -----------------------------------------------------------------

@dataclass
class SplitPlan:
    seed: int
    policy: str
    train_ids: list
    val_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)
    fold: int | None = None
    folds: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        sets = [set(self.train_ids), set(self.val_ids), set(self.test_ids)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            raise DataError(f"{self.policy} plan id sets overlap")
        if len(sets[0]) != len(self.train_ids) or len(sets[1]) != len(self.val_ids) \
                or len(sets[2]) != len(self.test_ids):
            raise DataError(f"{self.policy} plan repeats an id")

    @property
    def all_ids(self) -> set:
        return set(self.train_ids) | set(self.val_ids) | set(self.test_ids)

    def sizes(self) -> dict:
        return {"train": len(self.train_ids), "val": len(self.val_ids), "test": len(self.test_ids)}

    def to_dict(self) -> dict:
        return {
            "format": PLAN_FORMAT, "version": PLAN_VERSION,
            "seed": self.seed, "policy": self.policy,
            "fold": self.fold, "folds": self.folds, "params": self.params,
            "train_ids": list(self.train_ids), "val_ids": list(self.val_ids),
            "test_ids": list(self.test_ids),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        if d.get("format") != PLAN_FORMAT:
            raise DataError("not a split plan file")
        if d.get("version") != PLAN_VERSION:
            raise DataError(f"split plan version {d.get('version')!r} unsupported")
        return cls(seed=d["seed"], policy=d["policy"], train_ids=list(d["train_ids"]),
                   val_ids=list(d["val_ids"]), test_ids=list(d["test_ids"]),
                   fold=d.get("fold"), folds=d.get("folds"), params=dict(d.get("params") or {}))

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"split plan is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SplitPlan":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataError(f"cannot read split plan {path}: {exc.strerror}") from None


def shuffle(dataset: LabeledDataset, seed: int) -> LabeledDataset:
    """One seeded Fisher-Yates pass over the samples."""
    perm = RngStream(seed).child(_SHUFFLE).permutation(len(dataset))
    return LabeledDataset([dataset.samples[i] for i in perm], dataset.origin)


def _by_class(samples: Sequence[Sample]) -> dict:
    groups = {POSITIVE: [], NEGATIVE: []}
    for s in samples:
        groups[s.label].append(s)
    return groups


def _shuffled_class(samples: list, rng: RngStream) -> list:
    perm = rng.permutation(len(samples))
    return [samples[i] for i in perm]


def _manifest_order(ids, reference: Sequence[str]) -> list:
    keep = set(ids)
    return [i for i in reference if i in keep]


def _check_disjoint(a: LabeledDataset, b: LabeledDataset) -> None:
    overlap = set(a.ids) & set(b.ids)
    if overlap:
        raise DataError(f"official train and test overlap in {len(overlap)} ids, "
                        f"e.g. {sorted(overlap)[0]!r}")


def policy1(official_train: LabeledDataset, official_test: LabeledDataset,
            val_fraction: float = 0.1, seed: int = 0) -> SplitPlan:
    """Official test as test; a stratified ``floor(val_fraction * n_c)`` per class goes to validation."""
    _check_disjoint(official_train, official_test)
    frac = Decimal(str(val_fraction))
    if not Decimal(0) <= frac < 1:
        raise UsageError(f"val_fraction must be in [0, 1), got {val_fraction}")
    rng = RngStream(seed).child(_POLICY1)
    val = set()
    for label, members in sorted(_by_class(official_train.samples).items()):
        take = int((frac * len(members)).to_integral_value(rounding=ROUND_FLOOR))
        chosen = _shuffled_class(members, rng.child(label))[:take]
        val.update(s.sample_id for s in chosen)
    order = official_train.ids
    return SplitPlan(seed, "policy1",
                     train_ids=[i for i in order if i not in val],
                     val_ids=_manifest_order(val, order),
                     test_ids=official_test.ids,
                     params={"val_fraction": str(frac)})


def fold_assignment(samples: Sequence[Sample], k: int, seed: int, stratify: bool = True) -> list:
    """Fold index per sample (in input order).

    Samples are shuffled, then (when stratified) grouped by class, and the
    resulting list is dealt round-robin. Dealing one concatenated list keeps
    both the fold sizes and every class's per-fold count within 1 of even.
    """
    rng = RngStream(seed).child(_POLICY2)
    order = [samples[i] for i in rng.permutation(len(samples))]
    if stratify:
        groups = _by_class(order)
        order = groups[POSITIVE] + groups[NEGATIVE]
    position = {s.sample_id: i % k for i, s in enumerate(order)}
    return [position[s.sample_id] for s in samples]


def policy2(official_train: LabeledDataset, official_test: LabeledDataset, k: int = 10,
            seed: int = 0, stratify: bool = True) -> list:
    """Merge both sets and return ``k`` plans, plan i testing on fold i."""
    merged = merge(official_train, official_test)
    if not isinstance(k, (int, np.integer)) or not 2 <= k <= len(merged):
        raise UsageError(f"k must be in [2, {len(merged)}], got {k}")
    folds = fold_assignment(merged.samples, k, seed, stratify)
    plans = []
    for i in range(k):
        test = [s.sample_id for s, f in zip(merged.samples, folds) if f == i]
        train = [s.sample_id for s, f in zip(merged.samples, folds) if f != i]
        plans.append(SplitPlan(seed, "policy2", train_ids=train, test_ids=test,
                               fold=i, folds=int(k), params={"stratify": stratify}))
    return plans


def policy3_move_count(n_train: int, n_test: int, ratio) -> int:
    """n = round_half_even((ratio*|T| - |S|) / (1 + ratio)), clamped at 0."""
    r = Decimal(str(ratio))
    n = ((r * n_train - n_test) / (1 + r)).to_integral_value(rounding=ROUND_HALF_EVEN)
    return max(0, int(n))


def largest_remainder(total: int, weights: Sequence[int]) -> list:
    """Split ``total`` proportionally to ``weights``; ties go to the earlier entry."""
    wsum = sum(weights)
    if wsum == 0:
        return [0] * len(weights)
    base = [total * w // wsum for w in weights]
    rema = [total * w % wsum for w in weights]
    left = total - sum(base)
    for i in sorted(range(len(weights)), key=lambda j: (-rema[j], j))[:left]:
        base[i] += 1
    return base


def policy3(official_train: LabeledDataset, official_test: LabeledDataset, ratio: float = 0.1,
            seed: int = 0, stratify: bool = True) -> SplitPlan:
    """Move training samples to the test set until test is about ``ratio`` of what remains."""
    _check_disjoint(official_train, official_test)
    if not 0 < float(ratio) < 1:
        raise UsageError(f"ratio must be in (0, 1), got {ratio}")
    n = policy3_move_count(len(official_train), len(official_test), ratio)
    rng = RngStream(seed).child(_POLICY3)
    moved = set()
    if stratify:
        groups = _by_class(official_train.samples)
        labels = [POSITIVE, NEGATIVE]
        quotas = largest_remainder(n, [len(groups[c]) for c in labels])
        for label, quota in zip(labels, quotas):
            chosen = _shuffled_class(groups[label], rng.child(label))[:quota]
            moved.update(s.sample_id for s in chosen)
    else:
        chosen = _shuffled_class(list(official_train.samples), rng)[:n]
        moved.update(s.sample_id for s in chosen)
    order = official_train.ids
    return SplitPlan(seed, "policy3",
                     train_ids=[i for i in order if i not in moved],
                     test_ids=official_test.ids + _manifest_order(moved, order),
                     params={"ratio": str(Decimal(str(ratio))), "moved": n, "stratify": stratify})


def size_table(plan: SplitPlan, dataset: LabeledDataset) -> str:
    """Per-class counts of every part, in the layout of a train/test size table."""
    labels = {s.sample_id: s.label for s in dataset.samples}
    parts = [("train", plan.train_ids), ("val", plan.val_ids), ("test", plan.test_ids)]
    lines = [f"{'category':<10}" + "".join(f"{name:>9}" for name, _ in parts)]
    for text, label in (("positive", POSITIVE), ("negative", NEGATIVE)):
        counts = [sum(1 for i in ids if labels[i] == label) for _, ids in parts]
        lines.append(f"{text:<10}" + "".join(f"{c:>9}" for c in counts))
    lines.append(f"{'total':<10}" + "".join(f"{len(ids):>9}" for _, ids in parts))
    return "\n".join(lines)
