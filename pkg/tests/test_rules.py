import numpy as np
import pytest

from riskrules.data import FeatureSpec
from riskrules.errors import DegenerateRuleError
from riskrules.rules import (Rule, acceptance_labels, describe_rule, evaluate_rule,
                             fit_rule, normalized_distance, rule_outputs)


def test_published_continuous_example():
    # survivors aggregate to 76, deceased to 92 -> "value >= 84 means death"
    values = np.array([70.0, 76.0, 82.0, 86.0, 92.0, 98.0])
    labels = np.array([0, 0, 0, 1, 1, 1])
    rule = fit_rule("X", values, labels)
    assert rule.negative_centroid == 76.0
    assert rule.positive_centroid == 92.0
    assert rule.threshold == 84.0
    assert rule.death_direction == "high"
    assert evaluate_rule(rule, 84.0).output == 1
    assert evaluate_rule(rule, 83.9).output == 0


def test_swapped_labels_flip_direction_keep_threshold():
    values = np.array([70.0, 76.0, 82.0, 86.0, 92.0, 98.0])
    labels = np.array([0, 0, 0, 1, 1, 1])
    a = fit_rule("X", values, labels)
    b = fit_rule("X", values, 1 - labels)
    assert a.threshold == b.threshold
    assert a.death_direction == "high" and b.death_direction == "low"
    assert evaluate_rule(b, 70.0).output == 1


def test_ordinal_threshold_splits_levels():
    # centroid midpoint at 2.42 on a 4-level ordinal: levels 3 and 4 mean death
    rule = Rule("Z", positive_centroid=2.92, negative_centroid=1.92, threshold=2.42)
    outputs = [evaluate_rule(rule, lv).output for lv in (1.0, 2.0, 3.0, 4.0)]
    assert outputs == [0, 0, 1, 1]
    spec = FeatureSpec("Z", "ordinal", ("1", "2", "3", "4"))
    assert describe_rule(rule, spec) == "3 or 4: death"


def test_median_aggregator():
    values = np.array([1.0, 2.0, 100.0, 5.0, 6.0, 1000.0])
    labels = np.array([0, 0, 0, 1, 1, 1])
    rule = fit_rule("X", values, labels, aggregator="median")
    assert rule.negative_centroid == 2.0
    assert rule.positive_centroid == 6.0
    assert rule.threshold == 4.0


def test_fit_rule_ignores_missing_and_requires_both_classes():
    values = np.array([1.0, np.nan, 3.0])
    with pytest.raises(DegenerateRuleError):
        fit_rule("X", values, np.array([0, 1, 0]))  # class 1 only has a missing value
    rule = fit_rule("X", np.array([1.0, np.nan, 3.0, 5.0]), np.array([0, 1, 0, 1]))
    assert rule.negative_centroid == 2.0 and rule.positive_centroid == 5.0


def test_equal_centroids_degenerate():
    with pytest.raises(DegenerateRuleError):
        fit_rule("X", np.array([1.0, 2.0, 1.0, 2.0]), np.array([0, 0, 1, 1]))


def test_normalized_distance_anchors():
    rule = Rule("X", positive_centroid=92.0, negative_centroid=76.0, threshold=84.0)
    assert normalized_distance(rule, 92.0) == 1.0
    assert normalized_distance(rule, 76.0) == 0.0
    assert normalized_distance(rule, 84.0) == 0.5
    assert evaluate_rule(rule, 200.0).output == 1  # beyond the positive centroid


def test_normalized_distance_monotone_between_centroids():
    rule = Rule("X", positive_centroid=10.0, negative_centroid=0.0, threshold=5.0)
    xs = np.linspace(0.0, 10.0, 81)
    nd = normalized_distance(rule, xs)
    assert (np.diff(nd) >= -1e-12).all()
    # the 0.5 crossing marks the death side everywhere, even beyond the centroids
    probe = np.linspace(-20.0, 30.0, 201)
    nd = normalized_distance(rule, probe)
    assert ((nd >= 0.5) == (probe >= 5.0)).all()


def test_published_table_of_outputs_and_acceptances():
    distances = np.array([0.32, 0.12, 0.73, 0.64, 0.20])
    outputs = (distances >= 0.5).astype(int)
    np.testing.assert_array_equal(outputs, [0, 0, 1, 1, 0])
    np.testing.assert_array_equal(acceptance_labels(outputs, 0), [1, 1, 0, 0, 1])


def test_acceptance_matches_xor_on_all_cases():
    for output in (0, 1):
        for true_label in (0, 1):
            acc = acceptance_labels(np.array([output]), true_label)[0]
            assert acc == 1 - (output ^ true_label)


def test_acceptance_all_match_and_all_miss():
    outs = np.array([1, 1, 1])
    np.testing.assert_array_equal(acceptance_labels(outs, 1), [1, 1, 1])
    np.testing.assert_array_equal(acceptance_labels(np.zeros(3, int), 1), [0, 0, 0])


def test_threshold_midpoint_identity_random_rules():
    rng = np.random.default_rng(2)
    for _ in range(50):
        values = rng.normal(rng.uniform(-50, 50), rng.uniform(0.5, 20), size=40)
        labels = (rng.random(40) < 0.5).astype(float)
        if labels.min() == labels.max():
            continue
        try:
            rule = fit_rule("f", values, labels)
        except DegenerateRuleError:
            continue
        assert rule.threshold == (rule.positive_centroid + rule.negative_centroid) / 2.0


def test_affine_equivariance_preserves_outputs():
    rng = np.random.default_rng(9)
    values = rng.normal(10, 3, 60)
    labels = (values + rng.normal(0, 1, 60) > 10).astype(float)
    rule = fit_rule("f", values, labels)
    scale, shift = 3.7, -12.0
    rule2 = fit_rule("f", scale * values + shift, labels)
    assert np.isclose(rule2.threshold, scale * rule.threshold + shift)
    assert np.isclose(rule2.positive_centroid, scale * rule.positive_centroid + shift)
    probe = rng.normal(10, 5, 25)
    np.testing.assert_array_equal(rule_outputs(rule, probe),
                                  rule_outputs(rule2, scale * probe + shift))


def test_binary_rule_output_equals_raw_value():
    values = np.array([0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    labels = np.array([0, 0, 0, 0, 1, 1, 0, 1])
    rule = fit_rule("flag", values, labels)
    assert rule.positive_centroid > rule.negative_centroid
    np.testing.assert_array_equal(rule_outputs(rule, np.array([0.0, 1.0])), [0, 1])


def test_describe_rule_directions():
    spec = FeatureSpec("prior_stroke", "binary", ("no", "yes"))
    rule = Rule("prior_stroke", 0.25, 0.07, 0.16)
    assert describe_rule(rule, spec) == "yes: death"
    low = Rule("sbp", 130.0, 140.0, 135.0)
    assert describe_rule(low) == "<= 135.00: death"
