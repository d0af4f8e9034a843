"""Dataset builders and plan checks shared by the split tests and the acceptance suite."""

from fractions import Fraction
from pathlib import Path

import numpy as np

from cct import datasplit as ds
from cct.datasplit import NEGATIVE, POSITIVE, LabeledDataset, Sample

# official counts of the radiograph dataset: (positive, negative) per part
OFFICIAL_TRAIN_COUNTS = (16490, 13992)
OFFICIAL_TEST_COUNTS = (200, 200)


def make_dataset(n_pos: int, n_neg: int, origin: str, prefix: str) -> LabeledDataset:
    labels = [POSITIVE] * n_pos + [NEGATIVE] * n_neg
    return LabeledDataset([Sample(f"{prefix}/{i:06d}.png", Path(f"{prefix}/{i:06d}.png"), y)
                           for i, y in enumerate(labels)], origin)


def official_datasets():
    return (make_dataset(*OFFICIAL_TRAIN_COUNTS, "official_train", "train"),
            make_dataset(*OFFICIAL_TEST_COUNTS, "official_test", "test"))


def random_inputs(rng: np.random.Generator):
    """Random official train/test pair, shuffled label order, at most 200 samples in total."""
    def one(n, origin, prefix):
        labels = rng.integers(0, 2, n)
        return LabeledDataset([Sample(f"{prefix}/{i}.png", Path(f"{prefix}/{i}.png"), int(y))
                               for i, y in enumerate(labels)], origin)
    n_train = int(rng.integers(2, 161))
    n_test = int(rng.integers(0, 41))
    return one(n_train, "official_train", "tr"), one(n_test, "official_test", "te")


def assert_cover(plan: ds.SplitPlan, ids) -> None:
    parts = [set(plan.train_ids), set(plan.val_ids), set(plan.test_ids)]
    assert sum(map(len, parts)) == len(plan.train_ids) + len(plan.val_ids) + len(plan.test_ids)
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert parts[0] | parts[1] | parts[2] == set(ids)


def class_count(ids, labels: dict, label: int) -> int:
    return sum(1 for i in ids if labels[i] == label)


def stratification_gap(part_ids, labels: dict, share: Fraction) -> Fraction:
    """Largest per-class gap between a part's count and ``share`` of that class."""
    gaps = []
    for c in (POSITIVE, NEGATIVE):
        total = sum(1 for y in labels.values() if y == c)
        gaps.append(abs(class_count(part_ids, labels, c) - share * total))
    return max(gaps)


def replays(plan: ds.SplitPlan) -> bool:
    text = plan.to_json()
    back = ds.SplitPlan.from_json(text)
    return back == plan and back.to_json() == text


def check_all_policies(train: LabeledDataset, test: LabeledDataset, seed: int) -> list:
    """Run every policy once and return a list of property violations (empty when all hold)."""
    problems = []
    merged = ds.merge(train, test)
    labels = {s.sample_id: s.label for s in merged.samples}

    def expect(ok, what):
        if not ok:
            problems.append(f"seed {seed}: {what}")

    p1 = ds.policy1(train, test, 0.1, seed)
    p3 = ds.policy3(train, test, 0.1, seed)
    for plan in (p1, p3):
        try:
            assert_cover(plan, merged.ids)
        except AssertionError:
            expect(False, f"{plan.policy} is not a disjoint cover")
        expect(replays(plan), f"{plan.policy} does not replay from JSON")
        expect(plan.to_json() == getattr(ds, plan.policy)(train, test, 0.1, seed).to_json(),
               f"{plan.policy} is not a pure function of its inputs")
    train_labels = {s.sample_id: s.label for s in train.samples}
    expect(all(abs(class_count(p1.val_ids, train_labels, c) - Fraction(1, 10) * class_count(train.ids, train_labels, c)) < 1
               for c in (POSITIVE, NEGATIVE)), "policy1 validation stratification")
    moved = p3.test_ids[len(test):]
    n = p3.params["moved"]
    expect(len(moved) == n and p3.test_ids[:len(test)] == test.ids, "policy3 size identity")
    if n:
        expect(stratification_gap(moved, train_labels, Fraction(n, len(train))) <= 1,
               "policy3 stratification")

    k = int(min(len(merged), 2 + seed % 9))
    plans = ds.policy2(train, test, k, seed)
    seen = []
    for plan in plans:
        try:
            assert_cover(plan, merged.ids)
        except AssertionError:
            expect(False, f"policy2 fold {plan.fold} is not a disjoint cover")
        expect(stratification_gap(plan.test_ids, labels, Fraction(1, k)) <= 1,
               f"policy2 fold {plan.fold} stratification")
        expect(replays(plan), f"policy2 fold {plan.fold} does not replay")
        seen.extend(plan.test_ids)
    expect(sorted(seen) == sorted(merged.ids), "policy2 test folds do not partition the data")
    sizes = [len(p.test_ids) for p in plans]
    expect(max(sizes) - min(sizes) <= 1, "policy2 fold sizes differ by more than 1")
    return problems
