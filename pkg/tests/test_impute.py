import numpy as np
import pytest

from riskrules.data import Cohort, FeatureSpec
from riskrules.errors import DataError, ImputationFallbackWarning
from riskrules.impute import knn_impute

CONT = FeatureSpec("x", "continuous")


def cohort_of(schema, values, labels=None):
    values = np.asarray(values, dtype=float)
    labels = np.full(len(values), np.nan) if labels is None else np.asarray(labels, float)
    return Cohort(tuple(schema), values, labels)


def brute_force_impute(train, target, k):
    """Independent oracle: naive loops, explicit scaling and tie policy."""
    lo = np.nanmin(train.values, axis=0)
    span = np.nanmax(train.values, axis=0) - lo
    span = np.where(span <= 0, 1.0, span)
    ts = (train.values - lo) / span
    out = target.values.copy()
    for i in range(target.n):
        if not np.isnan(target.values[i]).any():
            continue
        q = (target.values[i] - lo) / span
        dists = []
        for t in range(train.n):
            shared = [j for j in range(len(q))
                      if not np.isnan(q[j]) and not np.isnan(ts[t, j])]
            if not shared:
                dists.append((np.inf, t))
                continue
            d2 = sum((q[j] - ts[t, j]) ** 2 for j in shared) / len(shared)
            dists.append((np.sqrt(d2), t))
        dists.sort(key=lambda pair: (pair[0], pair[1]))
        neighbors = [t for d, t in dists if np.isfinite(d)][:k]
        for j in range(len(q)):
            if not np.isnan(target.values[i, j]):
                continue
            donor = [train.values[t, j] for t in neighbors
                     if not np.isnan(train.values[t, j])]
            feat = train.schema[j]
            if feat.kind == "continuous":
                out[i, j] = np.mean(donor)
            elif feat.kind == "ordinal":
                out[i, j] = min(max(int(np.floor(np.mean(donor) + 0.5)), 1),
                                len(feat.levels))
            else:
                vals, counts = np.unique(donor, return_counts=True)
                out[i, j] = vals[np.argmax(counts)]
    return out


def test_k1_copies_nearest_value():
    train = cohort_of([CONT, FeatureSpec("age", "continuous")],
                      [[1.0, 60.0], [10.0, 30.0]])
    target = cohort_of([CONT, FeatureSpec("age", "continuous")], [[1.5, np.nan]])
    out = knn_impute(train, target, k=1)
    assert out.values[0, 1] == 60.0


def test_mode_for_binary():
    schema = [CONT, FeatureSpec("b", "binary")]
    train = cohort_of(schema, [[0.0, 1.0], [0.1, 1.0], [0.2, 0.0], [9.0, 0.0]])
    target = cohort_of(schema, [[0.05, np.nan]])
    out = knn_impute(train, target, k=3)
    assert out.values[0, 1] == 1.0  # neighbors contribute {1, 1, 0}


def test_mode_tie_breaks_to_smaller_level():
    schema = [CONT, FeatureSpec("b", "binary")]
    train = cohort_of(schema, [[0.0, 1.0], [0.1, 0.0], [5.0, 1.0], [9.0, 0.0]])
    target = cohort_of(schema, [[0.05, np.nan]])
    out = knn_impute(train, target, k=2)
    assert out.values[0, 1] == 0.0


def test_ordinal_mean_rounds_to_level():
    schema = [CONT, FeatureSpec("k", "ordinal", ("I", "II", "III", "IV"))]
    train = cohort_of(schema, [[0.0, 1.0], [0.1, 2.0], [0.2, 4.0], [9.0, 4.0]])
    target = cohort_of(schema, [[0.05, np.nan]])
    out = knn_impute(train, target, k=3)
    assert out.values[0, 1] == 2.0  # mean 7/3 = 2.33 rounds down


def test_matches_brute_force_oracle_mixed_cohort():
    rng = np.random.default_rng(123)
    schema = (FeatureSpec("a", "continuous"), FeatureSpec("b", "continuous"),
              FeatureSpec("k", "ordinal", ("1", "2", "3")), FeatureSpec("z", "binary"))
    n = 20
    values = np.column_stack([
        rng.normal(50, 10, n),
        rng.normal(0, 1, n),
        rng.integers(1, 4, n).astype(float),
        rng.integers(0, 2, n).astype(float),
    ])
    train = cohort_of(schema, values)
    tvals = np.column_stack([
        rng.normal(50, 10, 8),
        rng.normal(0, 1, 8),
        rng.integers(1, 4, 8).astype(float),
        rng.integers(0, 2, 8).astype(float),
    ])
    tvals[rng.random(tvals.shape) < 0.35] = np.nan
    tvals[0] = [np.nan, 0.0, np.nan, np.nan]
    target = cohort_of(schema, tvals)
    out = knn_impute(train, target, k=10)
    expected = brute_force_impute(train, target, k=10)
    np.testing.assert_array_equal(out.values, expected)


def test_matches_oracle_with_missing_training_cells():
    rng = np.random.default_rng(7)
    schema = (FeatureSpec("a", "continuous"), FeatureSpec("b", "continuous"),
              FeatureSpec("c", "continuous"))
    values = rng.normal(size=(40, 3))
    values[rng.random(values.shape) < 0.2] = np.nan
    values[:, 0][np.isnan(values[:, 0])] = 0.0  # keep at least one full column
    train = cohort_of(schema, values)
    tvals = rng.normal(size=(12, 3))
    tvals[rng.random(tvals.shape) < 0.3] = np.nan
    target = cohort_of(schema, tvals)
    out = knn_impute(train, target, k=5)
    expected = brute_force_impute(train, target, k=5)
    np.testing.assert_array_equal(out.values, expected)


def test_idempotent_on_complete_cohort():
    train = cohort_of([CONT], [[1.0], [2.0], [3.0]])
    target = cohort_of([CONT], [[1.5], [2.5]])
    assert knn_impute(train, target, k=2) is target


def test_imputed_continuous_within_neighbor_range():
    rng = np.random.default_rng(5)
    schema = (FeatureSpec("a", "continuous"), FeatureSpec("b", "continuous"))
    train = cohort_of(schema, rng.normal(size=(30, 2)))
    tvals = rng.normal(size=(10, 2))
    tvals[:, 1] = np.nan
    target = cohort_of(schema, tvals)
    out = knn_impute(train, target, k=4)
    lo, hi = train.values[:, 1].min(), train.values[:, 1].max()
    assert ((out.values[:, 1] >= lo) & (out.values[:, 1] <= hi)).all()


def test_train_records_never_modified():
    schema = (CONT, FeatureSpec("b", "continuous"))
    train = cohort_of(schema, [[0.0, np.nan], [1.0, 2.0], [2.0, 3.0]])
    before = train.values.copy()
    target = cohort_of(schema, [[0.5, np.nan]])
    knn_impute(train, target, k=2)
    np.testing.assert_array_equal(np.nan_to_num(train.values), np.nan_to_num(before))


def test_no_shared_features_errors():
    schema = (CONT, FeatureSpec("b", "continuous"))
    train = cohort_of(schema, [[1.0, np.nan], [2.0, np.nan]])
    target = cohort_of(schema, [[np.nan, 5.0]])
    with pytest.raises(DataError, match="shares no observed feature"):
        knn_impute(train, target, k=1)


def test_fallback_to_column_statistic_warns():
    schema = (CONT, FeatureSpec("b", "continuous"))
    train = cohort_of(schema, [[0.0, np.nan], [0.1, np.nan], [50.0, 7.0]])
    target = cohort_of(schema, [[0.05, np.nan]])
    with pytest.warns(ImputationFallbackWarning):
        out = knn_impute(train, target, k=2)  # both neighbors lack feature b
    assert out.values[0, 1] == 7.0


def test_exclude_self_changes_training_imputation():
    schema = (CONT, FeatureSpec("b", "continuous"))
    values = np.array([[0.0, np.nan], [0.1, 4.0], [0.2, 8.0]])
    train = cohort_of(schema, values)
    out = knn_impute(train, train, k=2, exclude_self=True)
    assert out.values[0, 1] == 6.0
    np.testing.assert_array_equal(out.values[1:], values[1:])


def test_k_larger_than_pool_errors():
    train = cohort_of([CONT], [[1.0], [2.0]])
    target = cohort_of([CONT], [[np.nan]])
    with pytest.raises(DataError):
        knn_impute(train, target, k=3)
