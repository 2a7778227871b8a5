"""Classification-based evaluation of a feature subset.

A k-nearest-neighbour classifier stands in for the random forests of the
original protocol: repeated 80/20 holdout, k tuned by stratified 10-fold
cross-validation on the training side, then test overall accuracy and
Cohen's kappa.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import FeatureMatrix, apply_scaling, derive_seeds, split_holdout, stream_rng

DEFAULT_K_GRID = (1, 3, 5, 7, 9, 11, 15)


class UndefinedMetricError(ValueError):
    """The metric has a zero denominator for this confusion matrix."""


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are actual classes, columns predicted classes."""

    labels: tuple
    counts: np.ndarray

    @classmethod
    def from_labels(cls, actual, predicted, labels: Sequence | None = None) -> "ConfusionMatrix":
        actual = np.asarray(actual)
        predicted = np.asarray(predicted)
        if actual.shape != predicted.shape:
            raise ValueError("actual and predicted must have the same length")
        if labels is None:
            labels = np.unique(np.concatenate([actual, predicted]))
        labels = tuple(np.asarray(labels).tolist())
        code = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for a, p in zip(actual.tolist(), predicted.tolist()):
            counts[code[a], code[p]] += 1
        return cls(labels, counts)

    @property
    def n_test(self) -> int:
        return int(self.counts.sum())

    @property
    def actual_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def predicted_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    n = cm.n_test
    if n == 0:
        raise UndefinedMetricError("empty confusion matrix")
    return float(np.trace(cm.counts)) / n


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """Chance-corrected agreement from the confusion matrix.

    Integer arithmetic is used up to the final division.
    """
    n = cm.n_test
    if n == 0:
        raise UndefinedMetricError("empty confusion matrix")
    agree = int(np.trace(cm.counts))
    chance = int(np.dot(cm.actual_totals, cm.predicted_totals))
    denom = n * n - chance
    if denom == 0:
        raise UndefinedMetricError("kappa undefined: actual and predicted are the same single class")
    return (n * agree - chance) / denom


def _class_codes(labels):
    classes, codes = np.unique(np.asarray(labels), return_inverse=True)
    return classes, codes.reshape(-1)


def _neighbour_order(train_x: np.ndarray, test_x: np.ndarray, k_max: int, chunk: int = 512) -> np.ndarray:
    """Indices of the ``k_max`` nearest training rows for each test row.

    Equal distances are ordered by training-row index.
    """
    out = np.empty((test_x.shape[0], k_max), dtype=np.int64)
    sq_train = np.einsum("ij,ij->i", train_x, train_x)
    for start in range(0, test_x.shape[0], chunk):
        blk = test_x[start:start + chunk]
        d2 = sq_train[None, :] - 2.0 * blk @ train_x.T + np.einsum("ij,ij->i", blk, blk)[:, None]
        np.maximum(d2, 0.0, out=d2)
        out[start:start + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k_max]
    return out


def _vote(neigh_codes: np.ndarray, k: int, n_classes: int) -> np.ndarray:
    votes = np.zeros((neigh_codes.shape[0], n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(neigh_codes.shape[0]), k)
    np.add.at(votes, (rows, neigh_codes[:, :k].reshape(-1)), 1)
    # argmax returns the first maximum, i.e. the smallest class label
    return votes.argmax(axis=1)


def baseline_classify(train_x, train_y, test_x, k: int = 1) -> np.ndarray:
    """k-nearest-neighbour majority vote with Euclidean distance.

    Inputs are expected on a common scale (see :func:`apply_scaling`).
    Vote ties go to the smallest class label.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    if train_x.ndim == 1:
        train_x = train_x[:, None]
    if test_x.ndim == 1:
        test_x = test_x[:, None]
    if len(train_x) == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= len(train_x):
        raise ValueError(f"k={k} must lie in [1, {len(train_x)}]")
    classes, codes = _class_codes(train_y)
    order = _neighbour_order(train_x, test_x, k)
    return classes[_vote(codes[order], k, len(classes))]


def stratified_folds(labels, n_folds: int, seed: int) -> np.ndarray:
    """Fold id per row; each class is dealt round-robin after a seeded shuffle."""
    labels = np.asarray(labels)
    fold = np.empty(len(labels), dtype=np.int64)
    rng = stream_rng(seed)
    offset = 0
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        fold[members] = (np.arange(len(members)) + offset) % n_folds
        offset += len(members)
    return fold


def _tune_k(x: np.ndarray, codes: np.ndarray, n_classes: int, k_grid, n_folds: int, seed: int) -> int:
    fold = stratified_folds(codes, n_folds, seed)
    usable = [k for k in k_grid if k <= len(x) - np.bincount(fold).max()]
    if not usable:
        return min(k_grid)
    hits = np.zeros(len(usable))
    for f in range(n_folds):
        test = fold == f
        if not test.any():
            continue
        train = ~test
        lo, hi = x[train].min(axis=0), x[train].max(axis=0)
        xtr = apply_scaling(x[train], lo, hi)
        xte = apply_scaling(x[test], lo, hi)
        order = _neighbour_order(xtr, xte, max(usable))
        neigh = codes[train][order]
        for i, k in enumerate(usable):
            hits[i] += np.count_nonzero(_vote(neigh, k, n_classes) == codes[test])
    return usable[int(np.argmax(hits))]


def _json_num(v: float):
    return None if math.isnan(v) else v


@dataclass(frozen=True)
class EvalReport:
    features: tuple[str, ...]
    repeats: int
    oa_mean: float
    oa_sd: float
    kappa_mean: float
    kappa_sd: float
    oa_values: tuple[float, ...] = field(default=())
    kappa_values: tuple[float, ...] = field(default=())
    chosen_k: tuple[int, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "features": list(self.features),
            "repeats": self.repeats,
            "oa_mean": _json_num(self.oa_mean),
            "oa_sd": _json_num(self.oa_sd),
            "kappa_mean": _json_num(self.kappa_mean),
            "kappa_sd": _json_num(self.kappa_sd),
            "oa_values": list(self.oa_values),
            "kappa_values": [_json_num(v) for v in self.kappa_values],
            "chosen_k": list(self.chosen_k),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["features", "n_features", "oa", "kappa"])
            w.writerow([
                " ".join(self.features),
                len(self.features),
                f"{self.oa_mean:.2f} ({self.oa_sd:.2f})",
                f"{self.kappa_mean:.2f} ({self.kappa_sd:.2f})",
            ])


def _mean_sd(values) -> tuple[float, float]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=np.float64)
    if len(v) == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def evaluate_subset(
    m: FeatureMatrix,
    labels,
    subset: Sequence[str],
    repeats: int = 20,
    test_fraction: float = 0.2,
    k_grid: Sequence[int] = DEFAULT_K_GRID,
    n_folds: int = 10,
    seed: int = 0,
    split_seeds: Sequence[int] | None = None,
) -> EvalReport:
    """Repeated-holdout accuracy and kappa of a k-NN classifier on ``subset``.

    OA is reported in percent and kappa multiplied by 100. Pass
    ``split_seeds`` to evaluate several subsets on identical splits.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    labels = np.asarray(labels)
    data = m.select(list(subset))
    classes, codes = _class_codes(labels)
    seeds = list(split_seeds) if split_seeds is not None else derive_seeds(seed, repeats)
    if len(seeds) < repeats:
        raise ValueError("not enough split seeds for the requested repeats")
    oa, kappa, chosen = [], [], []
    for r in range(repeats):
        train, test = split_holdout(data, labels, test_fraction, seeds[r])
        if len(np.unique(codes[train])) < len(classes):
            missing = sorted(set(classes.tolist()) - set(classes[np.unique(codes[train])].tolist()))
            raise EvaluationError(f"classes absent from every training fold: {missing}")
        xtr = data.values[train]
        lo, hi = xtr.min(axis=0), xtr.max(axis=0)
        xtr_s = apply_scaling(xtr, lo, hi)
        xte_s = apply_scaling(data.values[test], lo, hi)
        k = _tune_k(xtr, codes[train], len(classes), k_grid, n_folds, seeds[r] ^ 0x5EED)
        pred = baseline_classify(xtr_s, codes[train], xte_s, k)
        cm = ConfusionMatrix.from_labels(codes[test], pred, labels=range(len(classes)))
        oa.append(100.0 * overall_accuracy(cm))
        try:
            kappa.append(100.0 * cohen_kappa(cm))
        except UndefinedMetricError:
            kappa.append(math.nan)
        chosen.append(k)
    oa_mean, oa_sd = _mean_sd(oa)
    k_mean, k_sd = _mean_sd(kappa)
    return EvalReport(tuple(subset), repeats, oa_mean, oa_sd, k_mean, k_sd, tuple(oa), tuple(kappa), tuple(chosen))
