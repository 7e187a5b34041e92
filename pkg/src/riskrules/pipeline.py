"""The trainable risk pipeline: rules, acceptance models, calibration,
reliability and risk stratification, with a versioned file artifact.

Training order matters and is fixed: impute on the full training cohort,
fit rules on all of it, derive per-rule acceptance labels, undersample
negatives for the acceptance-model training only, then score every
training record, fit the score-to-risk calibration and pick the risk
cutoff on the full training set.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import __version__ as _package_version
from .data import Cohort, FeatureSpec, PatientRecord, one_hot_expand
from .errors import ArtifactError, CalibrationError, DataError, DegenerateRuleError
from .impute import knn_impute
from .learners import (LogisticModel, NetworkModel, Scaling, TrainConfig,
                       fit_logistic, fit_network, predict_proba, sigmoid)
from .rules import Rule, acceptance_labels, fit_rule, rule_outputs
from .sampling import derive_subseed, undersample_negatives

DEFAULT_SEED = 20210501
ARTIFACT_NAME = "riskrules-pipeline"
ARTIFACT_VERSION = 1


def mortality_score(outputs, acceptances) -> tuple[float, float]:
    """Acceptance-weighted signed mean of rule votes.

    Survival votes count as -1 and death votes as +1, each weighted by its
    predicted acceptance; returns (t, s) with t in [-1,1] and s=(t+1)/2.
    """
    outputs = np.asarray(outputs, dtype=float)
    acceptances = np.asarray(acceptances, dtype=float)
    if outputs.size == 0:
        raise DataError("empty rule set")
    if outputs.shape != acceptances.shape:
        raise DataError("outputs and acceptances must have equal length")
    if ((acceptances < 0) | (acceptances > 1)).any():
        raise DataError("acceptances must lie in [0, 1]")
    t = float(np.mean((2.0 * outputs - 1.0) * acceptances))
    return t, (t + 1.0) / 2.0


def reliability(outputs, acceptances) -> float:
    """Gap between the mean acceptance of death rules and survival rules.

    An empty side contributes a mean of 0, so unanimous rule sets reduce to
    the present side's mean acceptance.
    """
    outputs = np.asarray(outputs, dtype=float)
    acceptances = np.asarray(acceptances, dtype=float)
    if outputs.size == 0:
        raise DataError("empty rule set")
    pos = outputs == 1
    mean_pos = float(acceptances[pos].mean()) if pos.any() else 0.0
    mean_neg = float(acceptances[~pos].mean()) if (~pos).any() else 0.0
    return abs(mean_pos - mean_neg)


class Calibration(NamedTuple):
    beta0: float
    beta1: float
    capped: bool = False


def risk_from_score(calibration: Calibration, score_s):
    return sigmoid(calibration.beta0 + calibration.beta1 * np.asarray(score_s, dtype=float))


_BETA_CAP = 50.0


def fit_calibration(scores_s, labels, max_iter: int = 200, tol: float = 1e-12
                    ) -> Calibration:
    """Newton fit of risk = sigmoid(b0 + b1*s) on training scores.

    Perfectly separated scores drive b1 to infinity; the slope is then
    capped and flagged instead of diverging.
    """
    s = np.asarray(scores_s, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("scores and labels must be matching vectors")
    if not ((y == 0).any() and (y == 1).any()):
        raise DataError("both classes are required to fit the calibration")
    if np.ptp(s) == 0:
        raise CalibrationError("scores are constant; calibration slope unidentifiable")

    beta = np.zeros(2)
    for _ in range(max_iter):
        z = beta[0] + beta[1] * s
        p = sigmoid(z)
        w = p * (1.0 - p)
        grad = np.array([np.sum(p - y), np.sum((p - y) * s)])
        hess = np.array([[np.sum(w), np.sum(w * s)],
                         [np.sum(w * s), np.sum(w * s * s)]])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return _capped_calibration(s, y)
        beta = beta - step
        if not np.isfinite(beta).all() or abs(beta[1]) > _BETA_CAP:
            return _capped_calibration(s, y)
        if np.max(np.abs(step)) < tol:
            return Calibration(float(beta[0]), float(beta[1]))
    raise CalibrationError(f"calibration did not converge in {max_iter} iterations")


def _capped_calibration(s: np.ndarray, y: np.ndarray) -> Calibration:
    sign = 1.0 if np.mean(s[y == 1]) >= np.mean(s[y == 0]) else -1.0
    beta1 = sign * _BETA_CAP
    beta0 = 0.0
    for _ in range(200):  # 1-D Newton for the intercept at fixed slope
        p = sigmoid(beta0 + beta1 * s)
        g = np.sum(p - y)
        h = np.sum(p * (1.0 - p))
        if h <= 0:
            break
        beta0 -= g / h
        if abs(g / h) < 1e-12:
            break
    warnings.warn("calibration scores are separable; slope capped at "
                  f"{beta1:+.0f}", UserWarning, stacklevel=3)
    return Calibration(float(beta0), float(beta1), capped=True)


def select_strat_threshold(risks, labels) -> float:
    """Risk cutoff maximizing the geometric mean of sensitivity/specificity.

    Candidates are midpoints between consecutive distinct sorted risks; the
    lowest maximizing cutoff is returned.
    """
    r = np.asarray(risks, dtype=float)
    y = np.asarray(labels, dtype=float)
    if not ((y == 0).any() and (y == 1).any()):
        raise DataError("both classes are required to pick a threshold")
    order = np.argsort(r, kind="stable")
    rs, ys = r[order], y[order]
    n_pos, n_neg = float((ys == 1).sum()), float((ys == 0).sum())
    distinct = np.flatnonzero(np.diff(rs) > 0) + 1  # first index of each new value
    if distinct.size == 0:
        return float(rs[0])
    cum_pos = np.cumsum(ys == 1)
    cum_neg = np.cumsum(ys == 0)
    sens = (n_pos - cum_pos[distinct - 1]) / n_pos
    spec = cum_neg[distinct - 1] / n_neg
    gm = np.sqrt(sens * spec)
    cutoffs = (rs[distinct - 1] + rs[distinct]) / 2.0
    return float(cutoffs[np.argmax(gm)])  # argmax takes the first (lowest) maximizer


@dataclass(frozen=True)
class PipelineConfig:
    rule_features: tuple[str, ...] | None = None  # post-encoding names; None = all
    median_features: tuple[str, ...] = ()  # rules aggregated by median
    model_kind: str = "logistic"  # acceptance models: "logistic" | "network"
    hidden: tuple[int, ...] = (8, 4)
    train: TrainConfig = TrainConfig()
    undersample_ratio: float = 1.5
    knn_k: int = 10
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.model_kind not in ("logistic", "network"):
            raise DataError(f"unknown acceptance model kind {self.model_kind!r}")
        if self.undersample_ratio <= 0:
            raise DataError("undersample_ratio must be positive")
        if self.knn_k < 1:
            raise DataError("knn_k must be at least 1")
        if self.rule_features is not None:
            object.__setattr__(self, "rule_features", tuple(self.rule_features))
        object.__setattr__(self, "median_features", tuple(self.median_features))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


@dataclass(frozen=True)
class RuleResult:
    feature: str
    output: int
    acceptance: float


@dataclass(frozen=True)
class Prediction:
    per_rule: tuple[RuleResult, ...]
    score_t: float
    score_s: float
    risk: float
    reliability: float
    stratum: str  # "low" | "high"
    imputed_features: tuple[str, ...] = ()


@dataclass(frozen=True)
class BatchPrediction:
    """Vectorized predictions for a whole cohort."""

    features: tuple[str, ...]  # rule feature order
    outputs: np.ndarray  # (n, r) int
    acceptances: np.ndarray  # (n, r) float
    score_t: np.ndarray
    score_s: np.ndarray
    risk: np.ndarray
    reliability: np.ndarray
    stratum: np.ndarray  # (n,) bool, True = high

    def prediction(self, i: int, imputed: tuple[str, ...] = ()) -> Prediction:
        per_rule = tuple(
            RuleResult(f, int(self.outputs[i, j]), float(self.acceptances[i, j]))
            for j, f in enumerate(self.features)
        )
        return Prediction(per_rule, float(self.score_t[i]), float(self.score_s[i]),
                          float(self.risk[i]), float(self.reliability[i]),
                          "high" if self.stratum[i] else "low", imputed)


@dataclass(frozen=True)
class FittedPipeline:
    schema: tuple[FeatureSpec, ...]  # raw input schema
    expanded_names: tuple[str, ...]  # feature order after one-hot encoding
    rules: tuple[Rule, ...]
    acceptance_models: tuple
    calibration: Calibration
    strat_threshold: float
    imputation_reference: Cohort  # complete, raw-schema training snapshot
    knn_k: int
    config: PipelineConfig
    label_column: str = "label"

    def __post_init__(self):
        if len(self.rules) != len(self.acceptance_models):
            raise ArtifactError("rule and acceptance-model counts differ")
        if not np.isfinite(self.calibration.beta1):
            raise ArtifactError("calibration slope is not finite")
        if not 0.0 < self.strat_threshold < 1.0:
            raise ArtifactError("stratification threshold must lie in (0, 1)")

    def feature_spec(self, name: str) -> FeatureSpec:
        for f in self.schema:
            if f.name == name:
                return f
        raise DataError(f"unknown feature {name!r}")


def fit_pipeline(train: Cohort, config: PipelineConfig) -> FittedPipeline:
    if np.isnan(train.labels).any():
        raise DataError("training cohort must be fully labeled")

    reference = knn_impute(train, train, k=config.knn_k, exclude_self=True)
    expanded = one_hot_expand(reference)
    names = expanded.feature_names

    wanted = names if config.rule_features is None else config.rule_features
    unknown = [f for f in wanted if f not in names]
    if unknown:
        raise DataError(f"rule features not in the encoded schema: {unknown}")

    rules: list[Rule] = []
    for feat in wanted:
        agg = "median" if feat in config.median_features else "mean"
        col = expanded.values[:, names.index(feat)]
        try:
            rules.append(fit_rule(feat, col, expanded.labels, agg))
        except DegenerateRuleError as exc:
            warnings.warn(f"dropping degenerate rule: {exc}", UserWarning, stacklevel=2)
    if not rules:
        raise DegenerateRuleError("no usable rules; all candidates were degenerate")

    outputs = np.column_stack([rule_outputs(r, expanded.values[:, names.index(r.feature)])
                               for r in rules])
    accepted = (outputs == expanded.labels[:, None].astype(int)).astype(int)

    sub_idx = undersample_negatives(np.arange(train.n), reference,
                                    config.undersample_ratio,
                                    derive_subseed(config.seed, 1))
    X_sub = expanded.values[sub_idx]

    models = []
    for i in range(len(rules)):
        cfg = dataclasses.replace(config.train, seed=derive_subseed(config.seed, 100 + i))
        y_i = accepted[sub_idx, i]
        if (y_i == y_i[0]).all():
            # rule always right (or wrong) on the balanced set: constant-probability model
            models.append(_constant_model(X_sub, float(np.clip(y_i[0], 0.02, 0.98))))
            continue
        if config.model_kind == "logistic":
            models.append(fit_logistic(X_sub, y_i, cfg))
        else:
            models.append(fit_network(X_sub, y_i, config.hidden, cfg))

    accept_prob = np.column_stack([predict_proba(m, expanded.values) for m in models])
    signed = 2.0 * outputs - 1.0
    t = np.mean(signed * accept_prob, axis=1)
    s = (t + 1.0) / 2.0

    calibration = fit_calibration(s, expanded.labels)
    risks = risk_from_score(calibration, s)
    threshold = select_strat_threshold(risks, expanded.labels)
    return FittedPipeline(train.schema, names, tuple(rules), tuple(models),
                          calibration, threshold, reference, config.knn_k, config)


def _constant_model(X: np.ndarray, p: float) -> LogisticModel:
    logit = float(np.log(p / (1.0 - p)))
    return LogisticModel(np.zeros(X.shape[1]), logit, Scaling.fit(X))


def predict_batch(pipeline: FittedPipeline, cohort: Cohort) -> BatchPrediction:
    if cohort.feature_names != tuple(f.name for f in pipeline.schema):
        raise DataError("record schema does not match the fitted pipeline")
    complete = knn_impute(pipeline.imputation_reference, cohort, k=pipeline.knn_k)
    expanded = one_hot_expand(complete)
    names = expanded.feature_names
    outputs = np.column_stack([rule_outputs(r, expanded.values[:, names.index(r.feature)])
                               for r in pipeline.rules])
    accept = np.column_stack([predict_proba(m, expanded.values)
                              for m in pipeline.acceptance_models])
    signed = 2.0 * outputs - 1.0
    t = np.mean(signed * accept, axis=1)
    s = (t + 1.0) / 2.0
    risk = risk_from_score(pipeline.calibration, s)

    pos_count = outputs.sum(axis=1)
    neg_count = outputs.shape[1] - pos_count
    sum_pos = (outputs * accept).sum(axis=1)
    sum_neg = ((1 - outputs) * accept).sum(axis=1)
    with np.errstate(invalid="ignore"):
        mean_pos = np.where(pos_count > 0, sum_pos / np.maximum(pos_count, 1), 0.0)
        mean_neg = np.where(neg_count > 0, sum_neg / np.maximum(neg_count, 1), 0.0)
    rel = np.abs(mean_pos - mean_neg)
    return BatchPrediction(tuple(r.feature for r in pipeline.rules), outputs, accept,
                           t, s, risk, rel, risk >= pipeline.strat_threshold)


def predict_patient(pipeline: FittedPipeline, record: PatientRecord) -> Prediction:
    """Score one (possibly incomplete) record against the fitted pipeline."""
    values = np.asarray(record.values, dtype=float)
    if values.shape != (len(pipeline.schema),):
        raise DataError("record length does not match the pipeline schema")
    imputed = tuple(f.name for f, v in zip(pipeline.schema, values) if np.isnan(v))
    cohort = Cohort(pipeline.schema, values[None, :], np.array([np.nan]))
    batch = predict_batch(pipeline, cohort)
    return batch.prediction(0, imputed)


# ---------------------------------------------------------------------------
# artifact serialization


def _scaling_to_dict(sc: Scaling) -> dict:
    return {"lo": sc.lo.tolist(), "span": sc.span.tolist()}


def _scaling_from_dict(d: dict) -> Scaling:
    return Scaling(np.array(d["lo"], dtype=float), np.array(d["span"], dtype=float))


def _model_to_dict(model) -> dict:
    if isinstance(model, LogisticModel):
        return {"kind": "logistic", "weights": model.weights.tolist(),
                "bias": model.bias, "scaling": _scaling_to_dict(model.scaling)}
    return {"kind": "network", "layer_sizes": list(model.layer_sizes),
            "weights": [w.tolist() for w in model.weights],
            "biases": [b.tolist() for b in model.biases],
            "hidden_activation": model.hidden_activation,
            "scaling": _scaling_to_dict(model.scaling)}


def _model_from_dict(d: dict):
    scaling = _scaling_from_dict(d["scaling"])
    if d["kind"] == "logistic":
        return LogisticModel(np.array(d["weights"], dtype=float), float(d["bias"]), scaling)
    if d["kind"] == "network":
        return NetworkModel(tuple(d["layer_sizes"]),
                            tuple(np.array(w, dtype=float) for w in d["weights"]),
                            tuple(np.array(b, dtype=float) for b in d["biases"]),
                            scaling, d.get("hidden_activation", "tanh"))
    raise ArtifactError(f"unknown model kind {d['kind']!r}")


def _schema_to_list(schema) -> list:
    return [{"name": f.name, "kind": f.kind, "levels": list(f.levels)} for f in schema]


def _schema_from_list(entries) -> tuple[FeatureSpec, ...]:
    return tuple(FeatureSpec(e["name"], e["kind"], tuple(e["levels"])) for e in entries)


def pipeline_to_dict(pipeline: FittedPipeline) -> dict:
    cfg = pipeline.config
    return {
        "artifact": ARTIFACT_NAME,
        "artifact_version": ARTIFACT_VERSION,
        "package_version": _package_version,
        "schema": _schema_to_list(pipeline.schema),
        "label_column": pipeline.label_column,
        "expanded_names": list(pipeline.expanded_names),
        "rules": [{"feature": r.feature, "positive_centroid": r.positive_centroid,
                   "negative_centroid": r.negative_centroid, "threshold": r.threshold,
                   "aggregator": r.aggregator} for r in pipeline.rules],
        "acceptance_models": [_model_to_dict(m) for m in pipeline.acceptance_models],
        "calibration": {"beta0": pipeline.calibration.beta0,
                        "beta1": pipeline.calibration.beta1,
                        "capped": pipeline.calibration.capped},
        "strat_threshold": pipeline.strat_threshold,
        "knn_k": pipeline.knn_k,
        "imputation_reference": {
            "values": pipeline.imputation_reference.values.tolist(),
            "labels": [None if np.isnan(v) else int(v)
                       for v in pipeline.imputation_reference.labels],
        },
        "config": {
            "rule_features": None if cfg.rule_features is None else list(cfg.rule_features),
            "median_features": list(cfg.median_features),
            "model_kind": cfg.model_kind,
            "hidden": list(cfg.hidden),
            "train": {"max_epochs": cfg.train.max_epochs,
                      "learning_rate": cfg.train.learning_rate,
                      "l2_penalty": cfg.train.l2_penalty,
                      "tolerance": cfg.train.tolerance,
                      "seed": cfg.train.seed},
            "undersample_ratio": cfg.undersample_ratio,
            "knn_k": cfg.knn_k,
            "seed": cfg.seed,
        },
    }


def pipeline_from_dict(doc: dict) -> FittedPipeline:
    try:
        if doc.get("artifact") != ARTIFACT_NAME:
            raise ArtifactError(f"not a {ARTIFACT_NAME} artifact")
        version = doc.get("artifact_version")
        if version != ARTIFACT_VERSION:
            raise ArtifactError(
                f"artifact version {version} unsupported; this build reads version "
                f"{ARTIFACT_VERSION}")
        schema = _schema_from_list(doc["schema"])
        ref = doc["imputation_reference"]
        labels = np.array([np.nan if v is None else float(v) for v in ref["labels"]])
        reference = Cohort(schema, np.array(ref["values"], dtype=float), labels)
        cfg_d = doc["config"]
        config = PipelineConfig(
            rule_features=None if cfg_d["rule_features"] is None
            else tuple(cfg_d["rule_features"]),
            median_features=tuple(cfg_d["median_features"]),
            model_kind=cfg_d["model_kind"],
            hidden=tuple(cfg_d["hidden"]),
            train=TrainConfig(**cfg_d["train"]),
            undersample_ratio=cfg_d["undersample_ratio"],
            knn_k=cfg_d["knn_k"],
            seed=cfg_d["seed"],
        )
        rules = tuple(Rule(r["feature"], r["positive_centroid"], r["negative_centroid"],
                           r["threshold"], r["aggregator"]) for r in doc["rules"])
        models = tuple(_model_from_dict(m) for m in doc["acceptance_models"])
        cal = Calibration(doc["calibration"]["beta0"], doc["calibration"]["beta1"],
                          doc["calibration"]["capped"])
        return FittedPipeline(schema, tuple(doc["expanded_names"]), rules, models,
                              cal, doc["strat_threshold"], reference, doc["knn_k"],
                              config, doc.get("label_column", "label"))
    except ArtifactError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"corrupt pipeline artifact: {exc}") from None


def save_pipeline(pipeline: FittedPipeline, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pipeline_to_dict(pipeline), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_pipeline(path) -> FittedPipeline:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"corrupt pipeline artifact: {exc}") from None
    if not isinstance(doc, dict):
        raise ArtifactError("corrupt pipeline artifact: not an object")
    return pipeline_from_dict(doc)
