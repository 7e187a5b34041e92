import numpy as np
import pytest

from riskrules.data import Cohort, FeatureSpec, PatientRecord
from riskrules.errors import DataError, DegenerateMetricWarning
from riskrules.learners import sigmoid
from riskrules.metrics import (CalibrationCurve, ConfusionCounts, PointScoreModel,
                               RiskMapping, ScoreBand, calibration_curve, confusion_at,
                               geometric_mean, load_point_score, npv_ppv_at_sensitivity,
                               point_score_predict, reliability_bins, roc_auc,
                               sensitivity_cutoff)


def pairwise_auc(scores, labels):
    """Exhaustive oracle over all positive/negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_auc_perfect_ranking():
    scores = np.array([0.1, 0.2, 0.8, 0.9])
    labels = np.array([0.0, 0.0, 1.0, 1.0])
    assert roc_auc(scores, labels) == 1.0


def test_auc_all_ties():
    scores = np.zeros(10)
    labels = np.repeat([0.0, 1.0], 5)
    assert roc_auc(scores, labels) == 0.5


def test_auc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(4, 31))
        labels = rng.integers(0, 2, n).astype(float)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.normal(size=n), 1)  # coarse grid forces ties
        assert roc_auc(scores, labels) == pytest.approx(
            pairwise_auc(scores, labels), abs=1e-12)


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=40)
    labels = rng.integers(0, 2, 40).astype(float)
    labels[0], labels[1] = 0.0, 1.0
    base = roc_auc(scores, labels)
    assert roc_auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
    assert roc_auc(3 * scores - 7, labels) == pytest.approx(base, abs=1e-12)


def test_auc_single_class_errors():
    with pytest.raises(DataError):
        roc_auc(np.array([0.1, 0.2]), np.array([1.0, 1.0]))


def test_confusion_at_extremes():
    scores = np.array([0.2, 0.4, 0.6, 0.8])
    labels = np.array([0.0, 1.0, 0.0, 1.0])
    c = confusion_at(scores, labels, 0.0)
    assert c.fn == 0 and c.tn == 0
    c = confusion_at(scores, labels, 1.1)
    assert c.tp == 0 and c.fp == 0


def test_confusion_hand_enumeration():
    scores = np.array([0.1, 0.3, 0.5, 0.5, 0.7, 0.9])
    labels = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 0.0])
    c = confusion_at(scores, labels, 0.5)
    assert (c.tp, c.tn, c.fp, c.fn) == (2, 1, 2, 1)
    assert c.sensitivity == pytest.approx(2 / 3)
    assert c.specificity == pytest.approx(1 / 3)


def test_geometric_mean_closed_forms():
    assert geometric_mean(ConfusionCounts(5, 5, 0, 0)) == 1.0
    c = ConfusionCounts(tp=4, tn=6, fp=4, fn=1)
    assert geometric_mean(c) == pytest.approx(np.sqrt(0.8 * 0.6), abs=1e-12)
    assert geometric_mean(ConfusionCounts(0, 9, 1, 5)) == 0.0


def test_npv_ppv_perfect_separation():
    scores = np.array([0.1, 0.2, 0.8, 0.9])
    labels = np.array([0.0, 0.0, 1.0, 1.0])
    npv, ppv, cutoff = npv_ppv_at_sensitivity(scores, labels, 0.8, scores, labels)
    assert npv == 1.0 and ppv == 1.0
    assert cutoff == 0.8


def test_npv_ppv_constant_scores_flagged():
    scores = np.full(20, 0.3)
    labels = np.concatenate([np.ones(2), np.zeros(18)])
    with pytest.warns(DegenerateMetricWarning):
        npv, ppv, _ = npv_ppv_at_sensitivity(scores, labels, 0.8, scores, labels)
    assert npv == 1.0
    assert ppv == pytest.approx(0.1)  # prevalence


def test_npv_ppv_low_prevalence_band():
    rng = np.random.default_rng(2)
    n = 4000
    y = (rng.random(n) < 0.05).astype(float)
    scores = np.clip(0.3 * y + rng.normal(0, 0.18, n) + 0.3, 0, 1)
    npv, ppv, _ = npv_ppv_at_sensitivity(scores, y, 0.8, scores, y)
    assert npv > 0.95
    assert ppv < 0.3


def test_sensitivity_cutoff_is_largest_reaching_target():
    ref_scores = np.array([0.9, 0.8, 0.7, 0.6, 0.5, 0.1, 0.2, 0.3])
    ref_labels = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    cutoff = sensitivity_cutoff(ref_scores, ref_labels, 0.8)
    assert cutoff == 0.6  # 4 of 5 positives at or above it
    c = confusion_at(ref_scores, ref_labels, cutoff)
    assert c.sensitivity >= 0.8


def test_calibration_curve_bernoulli_slope_one():
    rng = np.random.default_rng(3)
    risks = rng.uniform(0.02, 0.98, 100_000)
    labels = (rng.random(risks.size) < risks).astype(float)
    curve = calibration_curve(risks, labels)
    assert len(curve.bins) == 10
    assert sum(c for _, _, c in curve.bins) == risks.size
    assert curve.slope == pytest.approx(1.0, abs=0.05)
    assert curve.intercept == pytest.approx(0.0, abs=0.02)


def test_calibration_curve_halved_risks_slope_two():
    rng = np.random.default_rng(4)
    true_risk = rng.uniform(0.05, 0.9, 60_000)
    labels = (rng.random(true_risk.size) < true_risk).astype(float)
    curve = calibration_curve(true_risk / 2.0, labels)
    assert curve.slope == pytest.approx(2.0, abs=0.1)


def test_calibration_curve_identical_risks_flagged():
    with pytest.warns(DegenerateMetricWarning):
        curve = calibration_curve(np.full(100, 0.25),
                                  np.concatenate([np.ones(25), np.zeros(75)]))
    assert len(curve.bins) == 1
    assert np.isnan(curve.slope)
    assert curve.merged


def test_calibration_bins_ordered_and_partitioned():
    rng = np.random.default_rng(5)
    risks = rng.beta(2, 5, 5000) * 0.96 + 0.02
    labels = (rng.random(5000) < risks).astype(float)
    curve = calibration_curve(risks, labels)
    preds = [p for p, _, _ in curve.bins]
    assert preds == sorted(preds)
    assert sum(c for _, _, c in curve.bins) == 5000


def test_reliability_bins_extreme_association():
    rng = np.random.default_rng(6)
    rel = rng.random(500)
    wrong = (rel < 0.5).astype(float)
    table = reliability_bins(rel, wrong)
    assert table.p_value < 1e-6
    assert sum(table.counts) == 500


def test_reliability_bins_null_association():
    rng = np.random.default_rng(7)
    rel = rng.random(2000)
    wrong = (rng.random(2000) < 0.2).astype(float)
    table = reliability_bins(rel, wrong)
    assert table.p_value > 0.001  # no systematic association


def test_reliability_bins_top_bin_all_correct():
    rel = np.concatenate([np.full(50, 0.95), np.linspace(0, 0.89, 200)])
    wrong = np.concatenate([np.zeros(50), (np.linspace(0, 0.89, 200) < 0.4).astype(float)])
    table = reliability_bins(rel, wrong)
    assert table.counts[9] == 50
    assert table.error_rates[9] == 0.0


def test_chi_squared_matches_textbook_formula():
    # 2x3 table by hand: errors (10, 5, 1) out of (40, 40, 40)
    rel = np.concatenate([np.full(40, 0.05), np.full(40, 0.45), np.full(40, 0.85)])
    wrong = np.concatenate([np.repeat([1.0, 0.0], [10, 30]),
                            np.repeat([1.0, 0.0], [5, 35]),
                            np.repeat([1.0, 0.0], [1, 39])])
    table = reliability_bins(rel, wrong)
    counts = np.array([40.0, 40.0, 40.0])
    errs = np.array([10.0, 5.0, 1.0])
    observed = np.vstack([errs, counts - errs])
    expected = np.outer(observed.sum(axis=1), counts) / counts.sum()
    stat = ((observed - expected) ** 2 / expected).sum()
    assert table.chi_squared == pytest.approx(stat, abs=1e-12)
    assert table.dof == 2


def test_reliability_bins_input_validation():
    with pytest.raises(DataError):
        reliability_bins(np.array([1.2]), np.array([0.0]))


# ---------------------------------------------------------------------------
# point-score comparator

PS_SCHEMA = (FeatureSpec("age", "continuous"),
             FeatureSpec("killip", "ordinal", ("I", "II", "III", "IV")))


def simple_model():
    return PointScoreModel(
        numeric_bands={"age": (ScoreBand(-np.inf, 65.0, 0.0),
                               ScoreBand(65.0, np.inf, 10.0))},
        category_points={"killip": {"I": 0.0, "II": 20.0, "III": 39.0, "IV": 59.0}},
        risk_mapping=RiskMapping("logistic", beta0=-4.0, beta1=0.05),
        categories=(("low", 0.0), ("intermediate", 15.0), ("high", 40.0)),
    )


def test_point_score_sums_feature_points():
    model = simple_model()
    record = PatientRecord(np.array([72.0, 1.0]))
    score, risk, category = point_score_predict(model, record, PS_SCHEMA)
    assert score == 10.0
    assert risk == pytest.approx(float(sigmoid(-4.0 + 0.5)))
    assert category == "low"


def test_point_score_zero_table():
    model = PointScoreModel(
        numeric_bands={"age": (ScoreBand(-np.inf, np.inf, 0.0),)},
        category_points={},
        risk_mapping=RiskMapping("logistic", beta0=-2.0, beta1=0.1),
        categories=(("low", 0.0), ("high", 50.0)),
    )
    score, _, _ = point_score_predict(model, PatientRecord(np.array([99.0, 2.0])),
                                      PS_SCHEMA)
    assert score == 0.0


def test_point_score_fold_intermediate_into_low():
    model = simple_model()
    # III (39) + age<65 (0) = 39 -> intermediate, which folds low for 2-group use
    _, _, cat = point_score_predict(model, PatientRecord(np.array([50.0, 3.0])), PS_SCHEMA)
    assert cat == "intermediate"
    _, _, cat = point_score_predict(model, PatientRecord(np.array([72.0, 3.0])), PS_SCHEMA)
    assert cat == "high"  # 49 >= 40


def test_point_score_outside_breakpoints_errors():
    model = PointScoreModel(
        numeric_bands={"age": (ScoreBand(0.0, 100.0, 1.0),)},
        category_points={},
        risk_mapping=RiskMapping("logistic", beta0=0.0, beta1=1.0),
        categories=(("low", 0.0), ("high", 10.0)),
    )
    with pytest.raises(DataError, match="outside"):
        point_score_predict(model, PatientRecord(np.array([150.0, 1.0])), PS_SCHEMA)


def test_load_point_score_roundtrip():
    doc = {
        "features": {
            "age": {"bands": [{"max": 65, "points": 0}, {"min": 65, "points": 10}]},
            "killip": {"levels": {"I": 0, "II": 20, "III": 39, "IV": 59}},
        },
        "risk": {"kind": "logistic", "beta0": -4.0, "beta1": 0.05},
        "categories": [{"name": "low", "min_score": 0},
                       {"name": "intermediate", "min_score": 15},
                       {"name": "high", "min_score": 40}],
    }
    model = load_point_score(doc)
    record = PatientRecord(np.array([72.0, 4.0]))
    score, _, cat = point_score_predict(model, record, PS_SCHEMA)
    assert score == 69.0
    assert cat == "high"
    assert model.high_cutoff == 40.0
