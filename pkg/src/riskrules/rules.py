"""Dichotomous decision rules built from per-class centroids.

Each risk factor yields one rule: the class centroids act as virtual
patients, their midpoint is the decision threshold, and a record votes
"death" when it sits at least as close to the positive centroid as to the
negative one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureSpec
from .errors import DegenerateRuleError

AGGREGATORS = ("mean", "median")


@dataclass(frozen=True)
class Rule:
    feature: str
    positive_centroid: float  # class-1 (death) aggregate
    negative_centroid: float  # class-0 (survival) aggregate
    threshold: float
    aggregator: str = "mean"

    def __post_init__(self):
        if self.positive_centroid == self.negative_centroid:
            raise DegenerateRuleError(
                f"rule {self.feature!r}: class centroids coincide at {self.positive_centroid}"
            )
        mid = (self.positive_centroid + self.negative_centroid) / 2.0
        if abs(self.threshold - mid) > 1e-9 * max(1.0, abs(mid)):
            raise DegenerateRuleError(
                f"rule {self.feature!r}: threshold {self.threshold} is not the centroid midpoint"
            )
        if self.aggregator not in AGGREGATORS:
            raise DegenerateRuleError(f"unknown aggregator {self.aggregator!r}")

    @property
    def death_direction(self) -> str:
        """'high' when values at or above the threshold suggest death."""
        return "high" if self.positive_centroid > self.negative_centroid else "low"


@dataclass(frozen=True)
class RuleEvaluation:
    normalized_distance: float
    output: int  # 1 = death, 0 = survival


def fit_rule(feature: str, values, labels, aggregator: str = "mean") -> Rule:
    """Build the rule for one feature from labeled training values.

    Missing values are ignored; both classes must be represented and the
    two centroids must differ, otherwise the rule is degenerate.
    """
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels, dtype=float)
    seen = ~np.isnan(values) & ~np.isnan(labels)
    values, labels = values[seen], labels[seen]
    agg = np.mean if aggregator == "mean" else np.median
    if aggregator not in AGGREGATORS:
        raise DegenerateRuleError(f"unknown aggregator {aggregator!r}")
    pos = values[labels == 1.0]
    neg = values[labels == 0.0]
    if pos.size == 0 or neg.size == 0:
        raise DegenerateRuleError(f"rule {feature!r}: a class has no observed values")
    pc, nc = float(agg(pos)), float(agg(neg))
    if pc == nc:
        raise DegenerateRuleError(f"rule {feature!r}: class centroids coincide at {pc}")
    return Rule(feature, pc, nc, (pc + nc) / 2.0, aggregator)


def normalized_distance(rule: Rule, value):
    """Proximity to the positive centroid: 1 - d_pos / (d_pos + d_neg).

    1 at the positive centroid, 0 at the negative one, 0.5 at the threshold.
    Accepts scalars or arrays.
    """
    value = np.asarray(value, dtype=float)
    d_pos = np.abs(value - rule.positive_centroid)
    d_neg = np.abs(value - rule.negative_centroid)
    nd = 1.0 - d_pos / (d_pos + d_neg)
    return float(nd) if nd.ndim == 0 else nd


def rule_outputs(rule: Rule, values) -> np.ndarray:
    """Vectorized rule vote: 1 (death) when normalized distance >= 0.5."""
    nd = np.asarray(normalized_distance(rule, values))
    return (nd >= 0.5).astype(int)


def evaluate_rule(rule: Rule, value: float) -> RuleEvaluation:
    nd = normalized_distance(rule, value)
    return RuleEvaluation(nd, int(nd >= 0.5))


def acceptance_labels(outputs, true_label: int) -> np.ndarray:
    """1 where the rule output matches the record's true outcome, else 0."""
    outputs = np.asarray(outputs, dtype=int)
    return (outputs == int(true_label)).astype(int)


def describe_rule(rule: Rule, spec: FeatureSpec | None = None) -> str:
    """Clinician-facing rendering, e.g. '>= 66.8: death' or 'yes: death'."""
    if spec is not None and spec.kind == "binary":
        levels = spec.levels or ("0", "1")
        death = levels[1] if rule.death_direction == "high" else levels[0]
        return f"{death}: death"
    if spec is not None and spec.kind in ("ordinal", "nominal"):
        if rule.death_direction == "high":
            death = [lv for i, lv in enumerate(spec.levels, 1) if i >= rule.threshold]
        else:
            death = [lv for i, lv in enumerate(spec.levels, 1) if i <= rule.threshold]
        return f"{' or '.join(death)}: death"
    op = ">=" if rule.death_direction == "high" else "<="
    return f"{op} {rule.threshold:.2f}: death"
