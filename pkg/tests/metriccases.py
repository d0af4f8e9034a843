"""Brute-force metric oracles shared by the metric tests and the acceptance suite."""

from fractions import Fraction

import numpy as np

# fold percentages of the ten-fold cross-validation results
FOLD_ACCURACY_PCT = ["99.16", "98.90", "99.71", "99.38", "98.96", "99.61", "99.03", "98.80", "99.64", "99.03"]
FOLD_PRECISION_PCT = ["98.90", "98.21", "99.68", "99.10", "98.40", "99.42", "98.84", "97.90", "99.68", "98.65"]


def oracle_confusion(pred, lab):
    pred, lab = np.asarray(pred), np.asarray(lab)
    return (int(np.sum((pred == 1) & (lab == 1))), int(np.sum((pred == 1) & (lab == 0))),
            int(np.sum((pred == 0) & (lab == 1))), int(np.sum((pred == 0) & (lab == 0))))


def oracle_roc(scores, labels):
    """Confusion matrix at every distinct threshold, highest first."""
    pts = [(Fraction(0), Fraction(0))]
    P, N = sum(labels), len(labels) - sum(labels)
    for t in sorted(set(scores), reverse=True):
        pred = [1 if s >= t else 0 for s in scores]
        tp, fp, _, _ = oracle_confusion(pred, labels)
        pts.append((Fraction(fp, N), Fraction(tp, P)))
    return pts


def oracle_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def random_instance(rng):
    n = int(rng.integers(2, 51))
    labels = rng.integers(0, 2, n)
    labels[rng.integers(0, n)] = 1
    labels[(rng.integers(1, n) + np.argmax(labels)) % n] = 0
    # few distinct levels so ties are common
    scores = np.round(rng.random(n), int(rng.integers(1, 4)))
    return scores.tolist(), labels.tolist()


def oracle_scalars(tp, fp, fn, tn) -> dict:
    """Textbook definitions with 0 for empty denominators."""
    def ratio(a, b):
        return Fraction(a, b) if b else Fraction(0)
    return {
        "accuracy": ratio(tp + tn, tp + fp + fn + tn),
        "precision": ratio(tp, tp + fp),
        "recall": ratio(tp, tp + fn),
        "f1": ratio(2 * tp, 2 * tp + fp + fn),
        "tpr": ratio(tp, tp + fn),
        "fpr": ratio(fp, fp + tn),
        "fnr": ratio(fn, fn + tp),
        "tnr": ratio(tn, tn + fp),
    }
