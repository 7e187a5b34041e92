"""k-nearest-neighbor imputation of missing cohort values.

Distances are Euclidean over the features observed in both records
(pairwise-complete), after min-max scaling each feature by its training
range, and are normalized by the number of compared coordinates.  Ties at
the k-th neighbor resolve by training record index.
"""

from __future__ import annotations

import warnings

import numpy as np

from .data import Cohort
from .errors import DataError, ImputationFallbackWarning


def _training_scaling(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        lo = np.nanmin(values, axis=0)
        hi = np.nanmax(values, axis=0)
    lo = np.where(np.isnan(lo), 0.0, lo)
    span = np.where(np.isnan(hi) | (hi - lo <= 0), 1.0, hi - lo)
    return lo, span


def _column_fill(train: Cohort) -> np.ndarray:
    """Per-feature fallback: column mean (rounded for categories) or mode."""
    fill = np.empty(len(train.schema))
    for j, feat in enumerate(train.schema):
        col = train.values[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            raise DataError(f"feature {feat.name!r} is missing in every training record")
        if feat.kind == "continuous":
            fill[j] = col.mean()
        elif feat.kind == "ordinal":
            fill[j] = _round_to_level(col.mean(), len(feat.levels))
        else:
            fill[j] = _mode(col)
    return fill


def _mode(values: np.ndarray) -> float:
    uniq, counts = np.unique(values, return_counts=True)
    return float(uniq[np.argmax(counts)])  # ties: smallest value wins


def _round_to_level(x: float, n_levels: int) -> float:
    return float(min(max(int(np.floor(x + 0.5)), 1), n_levels))


def _aggregate(feat, neighbor_values: np.ndarray) -> float:
    if feat.kind == "continuous":
        return float(neighbor_values.mean())
    if feat.kind == "ordinal":
        return _round_to_level(neighbor_values.mean(), len(feat.levels))
    return _mode(neighbor_values)


def knn_impute(train: Cohort, target: Cohort, k: int = 10,
               exclude_self: bool = False) -> Cohort:
    """Fill every missing cell of `target` from its k nearest training records.

    Continuous and ordinal cells take the neighbor mean (ordinal rounded to
    the nearest level); binary and nominal cells take the neighbor mode with
    ties broken toward the smaller level.  Set `exclude_self` when target is
    the training cohort itself so a record cannot be its own donor.
    Training records are never modified.
    """
    if k < 1:
        raise DataError("k must be at least 1")
    pool = train.n - 1 if exclude_self else train.n
    if pool < k:
        raise DataError(f"training cohort has {pool} usable records, fewer than k={k}")
    if train.feature_names != target.feature_names:
        raise DataError("train and target cohorts must share a schema")
    if not np.isnan(target.values).any():
        return target

    lo, span = _training_scaling(train.values)
    train_scaled = (train.values - lo) / span
    target_scaled = (target.values - lo) / span
    train_mask = ~np.isnan(train.values)
    fallback = None

    filled = target.values.copy()
    for i in np.flatnonzero(np.isnan(target.values).any(axis=1)):
        row = target_scaled[i]
        row_mask = ~np.isnan(row)
        shared = train_mask & row_mask  # (n_train, d)
        n_shared = shared.sum(axis=1)
        diff = np.where(shared, train_scaled - row, 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            dist = np.sqrt(np.einsum("ij,ij->i", diff, diff) / n_shared)
        dist = np.where(n_shared == 0, np.inf, dist)
        if exclude_self:
            dist[i] = np.inf
        order = np.argsort(dist, kind="stable")
        order = order[np.isfinite(dist[order])]
        if order.size == 0:
            raise DataError(
                f"record {i} shares no observed feature with any training record"
            )
        neighbors = order[:k]
        for j in np.flatnonzero(np.isnan(target.values[i])):
            donor = train.values[neighbors, j]
            donor = donor[~np.isnan(donor)]
            if donor.size == 0:
                if fallback is None:
                    fallback = _column_fill(train)
                warnings.warn(
                    f"feature {train.schema[j].name!r} missing in all {k} neighbors of "
                    f"record {i}; training column statistic used",
                    ImputationFallbackWarning, stacklevel=2)
                filled[i, j] = fallback[j]
            else:
                filled[i, j] = _aggregate(train.schema[j], donor)
    return Cohort(target.schema, filled, target.labels)
