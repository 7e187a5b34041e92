"""Stratified splitting, Monte-Carlo split plans and negative undersampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Cohort
from .errors import DataError


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def derive_subseed(seed: int, index: int) -> int:
    """Deterministic child seed for repetition `index` of a master seed."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _class_indices(cohort: Cohort) -> tuple[np.ndarray, np.ndarray]:
    if np.isnan(cohort.labels).any():
        raise DataError("cohort contains unlabeled records; cannot stratify")
    pos = np.flatnonzero(cohort.labels == 1.0)
    neg = np.flatnonzero(cohort.labels == 0.0)
    if pos.size < 2 or neg.size < 2:
        raise DataError(
            f"each class needs at least 2 records (got {pos.size} positive, {neg.size} negative)"
        )
    return pos, neg


def stratified_split(cohort: Cohort, train_fraction: float, seed: int
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Sample each class independently at `train_fraction`; test gets the rest.

    Per-class train counts are round(fraction * class size), so the test
    prevalence stays within one patient of the cohort prevalence.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must be strictly between 0 and 1")
    pos, neg = _class_indices(cohort)
    rng = np.random.default_rng(seed)
    train_parts, test_parts = [], []
    for cls in (pos, neg):
        n_train = round_half_up(train_fraction * cls.size)
        n_train = min(max(n_train, 1), cls.size - 1)  # keep both sides nonempty
        perm = rng.permutation(cls.size)
        train_parts.append(cls[perm[:n_train]])
        test_parts.append(cls[perm[n_train:]])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts))
    return train, test


@dataclass(frozen=True)
class SplitPlan:
    """Reproducible train/test index pairs for repeated Monte-Carlo splits."""

    repetitions: int
    train_fraction: float
    seed: int
    index_pairs: tuple[tuple[np.ndarray, np.ndarray], ...]


def make_split_plan(cohort: Cohort, repetitions: int, train_fraction: float,
                    seed: int) -> SplitPlan:
    if repetitions < 1:
        raise DataError("repetitions must be at least 1")
    pairs = tuple(
        stratified_split(cohort, train_fraction, derive_subseed(seed, i))
        for i in range(repetitions)
    )
    return SplitPlan(repetitions, train_fraction, seed, pairs)


def undersample_negatives(train_indices, cohort: Cohort, ratio: float, seed: int
                          ) -> np.ndarray:
    """Keep all positives and round(ratio * positives) random negatives.

    The returned indices preserve the order of `train_indices`.
    """
    if ratio <= 0:
        raise DataError("undersampling ratio must be positive")
    train = np.asarray(train_indices, dtype=int)
    labels = cohort.labels[train]
    if np.isnan(labels).any():
        raise DataError("training indices include unlabeled records")
    n_pos = int((labels == 1.0).sum())
    n_neg = int((labels == 0.0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("training set must contain both classes")
    required = round_half_up(ratio * n_pos)
    if required > n_neg:
        raise DataError(
            f"undersampling needs {required} negatives but only {n_neg} are available"
        )
    neg_positions = np.flatnonzero(labels == 0.0)
    if required == n_neg:
        chosen = neg_positions
    else:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(neg_positions, size=required, replace=False)
    keep = np.zeros(train.size, dtype=bool)
    keep[labels == 1.0] = True
    keep[chosen] = True
    return train[keep]
