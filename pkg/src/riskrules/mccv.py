"""Monte-Carlo cross-validation driver comparing the rule-based pipeline
against standard baselines on identical splits.

Every repetition imputes on its own training set, fits each competitor on
the training side (baselines without any undersampling) and evaluates on
the held-out side.  Reported intervals are normal-approximation 95% CIs
over repetitions; paired deltas are computed per repetition.
"""

from __future__ import annotations

import dataclasses
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Cohort, one_hot_expand
from .errors import RiskRulesError
from .impute import knn_impute
from .learners import TrainConfig, fit_logistic, fit_network, predict_proba
from .metrics import (PointScoreModel, ReliabilityBinTable, calibration_curve,
                      confusion_at, fit_calibration_line, geometric_mean,
                      npv_ppv_at_sensitivity, point_score_batch, reliability_bins,
                      roc_auc)
from .pipeline import (PipelineConfig, fit_pipeline, predict_batch,
                       select_strat_threshold)
from .sampling import SplitPlan, derive_subseed

PROPOSED = "proposed"
METRICS = ("auc", "gm", "npv", "ppv")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class ProposedSpec:
    config: PipelineConfig = PipelineConfig()
    name: str = PROPOSED


@dataclass(frozen=True)
class LogisticBaselineSpec:
    train: TrainConfig = TrainConfig()
    name: str = "logistic"


@dataclass(frozen=True)
class NetworkBaselineSpec:
    hidden: tuple[int, ...] = (8, 8)
    train: TrainConfig = TrainConfig()
    name: str = "network"


@dataclass(frozen=True)
class PointScoreSpec:
    model: PointScoreModel
    name: str = "point_score"


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    ci_lo: float
    ci_hi: float
    per_rep: tuple[float, ...]


def summarize(values) -> MetricSummary:
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    half = 0.0 if v.size < 2 else 1.96 * float(v.std(ddof=1)) / np.sqrt(v.size)
    return MetricSummary(mean, mean - half, mean + half, tuple(float(x) for x in v))


def paired_delta_stats(a, b) -> MetricSummary:
    return summarize(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


@dataclass(frozen=True)
class CurveBin:
    predicted: float
    observed: float
    observed_lo: float
    observed_hi: float
    count: float


@dataclass(frozen=True)
class AggregatedCurve:
    bins: tuple[CurveBin, ...]
    slope: float
    intercept: float
    reps_used: int
    reps_skipped: int  # repetitions whose bins merged


@dataclass(frozen=True)
class EvalReport:
    repetitions: int
    train_fraction: float
    seed: int
    models: tuple[str, ...]
    completed: int
    failures: tuple[tuple[int, str], ...]
    metrics: dict  # model -> split -> metric -> MetricSummary
    deltas: dict  # model -> split -> metric -> MetricSummary (proposed minus model)
    calibration_curves: dict  # model -> AggregatedCurve
    reliability_table: ReliabilityBinTable | None
    strat_thresholds: MetricSummary | None
    rule_thresholds: dict  # feature -> mean threshold over repetitions


@dataclass
class _RepResult:
    rep: int
    metrics: dict = field(default_factory=dict)  # model -> split -> metric -> float
    gm_thresholds: dict = field(default_factory=dict)
    curve_bins: dict = field(default_factory=dict)  # model -> list of (p, o, c) or None
    reliabilities: np.ndarray | None = None
    misclassified: np.ndarray | None = None
    rule_thresholds: dict = field(default_factory=dict)
    error: str | None = None


def _model_metrics(train_scores, y_train, test_scores, y_test, gm_cutoff,
                   sens_target) -> dict:
    out = {s: {} for s in SPLITS}
    out["train"]["auc"] = roc_auc(train_scores, y_train)
    out["test"]["auc"] = roc_auc(test_scores, y_test)
    out["train"]["gm"] = geometric_mean(confusion_at(train_scores, y_train, gm_cutoff))
    out["test"]["gm"] = geometric_mean(confusion_at(test_scores, y_test, gm_cutoff))
    npv, ppv, _ = npv_ppv_at_sensitivity(train_scores, y_train, sens_target,
                                         train_scores, y_train)
    out["train"]["npv"], out["train"]["ppv"] = npv, ppv
    npv, ppv, _ = npv_ppv_at_sensitivity(test_scores, y_test, sens_target,
                                         train_scores, y_train)
    out["test"]["npv"], out["test"]["ppv"] = npv, ppv
    return out


def _curve_rows(risks, labels, n_bins):
    """Per-repetition decile bins, or None when bins had to merge."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curve = calibration_curve(risks, labels, n_bins)
    if curve.merged:
        return None
    return [(p, o, c) for p, o, c in curve.bins]


def _run_repetition(args) -> _RepResult:
    (cohort, pair, rep, specs, knn_k, sens_target, n_bins, plan_seed) = args
    result = _RepResult(rep=rep)
    try:
        train_idx, test_idx = pair
        train_raw = cohort.subset(train_idx)
        test_raw = cohort.subset(test_idx)
        train = knn_impute(train_raw, train_raw, k=knn_k, exclude_self=True)
        test = knn_impute(train, test_raw, k=knn_k)
        y_train, y_test = train.labels, test.labels
        rep_seed = derive_subseed(plan_seed, rep)

        expanded_train = expanded_test = None
        for m_idx, spec in enumerate(specs):
            seed = derive_subseed(rep_seed, m_idx)
            if isinstance(spec, ProposedSpec):
                cfg = dataclasses.replace(spec.config, seed=seed, knn_k=knn_k)
                pipe = fit_pipeline(train, cfg)
                tb = predict_batch(pipe, train)
                vb = predict_batch(pipe, test)
                cutoff = pipe.strat_threshold
                tr_scores, te_scores = tb.risk, vb.risk
                result.gm_thresholds[spec.name] = cutoff
                result.reliabilities = vb.reliability
                result.misclassified = (vb.stratum != (y_test == 1.0)).astype(float)
                result.rule_thresholds = {r.feature: r.threshold for r in pipe.rules}
            elif isinstance(spec, PointScoreSpec):
                # fixed external model: no training; GM from the configured
                # category fold (intermediate joins low)
                _, tr_scores, tr_high = point_score_batch(spec.model, train)
                _, te_scores, te_high = point_score_batch(spec.model, test)
                result.metrics[spec.name] = _point_score_metrics(
                    tr_scores, tr_high, y_train, te_scores, te_high, y_test, sens_target)
                result.curve_bins[spec.name] = _curve_rows(te_scores, y_test, n_bins)
                continue
            else:
                if expanded_train is None:
                    expanded_train = one_hot_expand(train)
                    expanded_test = one_hot_expand(test)
                cfg = dataclasses.replace(spec.train, seed=seed)
                if isinstance(spec, LogisticBaselineSpec):
                    model = fit_logistic(expanded_train.values, y_train, cfg)
                else:
                    model = fit_network(expanded_train.values, y_train, spec.hidden, cfg)
                tr_scores = predict_proba(model, expanded_train.values)
                te_scores = predict_proba(model, expanded_test.values)
                cutoff = select_strat_threshold(tr_scores, y_train)
                result.gm_thresholds[spec.name] = cutoff
            result.metrics[spec.name] = _model_metrics(tr_scores, y_train, te_scores,
                                                       y_test, cutoff, sens_target)
            result.curve_bins[spec.name] = _curve_rows(te_scores, y_test, n_bins)
    except RiskRulesError as exc:
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _point_score_metrics(tr_scores, tr_high, y_train, te_scores, te_high, y_test,
                         sens_target) -> dict:
    out = {s: {} for s in SPLITS}
    out["train"]["auc"] = roc_auc(tr_scores, y_train)
    out["test"]["auc"] = roc_auc(te_scores, y_test)
    out["train"]["gm"] = geometric_mean(confusion_at(tr_high.astype(float), y_train, 0.5))
    out["test"]["gm"] = geometric_mean(confusion_at(te_high.astype(float), y_test, 0.5))
    npv, ppv, _ = npv_ppv_at_sensitivity(tr_scores, y_train, sens_target,
                                         tr_scores, y_train)
    out["train"]["npv"], out["train"]["ppv"] = npv, ppv
    npv, ppv, _ = npv_ppv_at_sensitivity(te_scores, y_test, sens_target,
                                         tr_scores, y_train)
    out["test"]["npv"], out["test"]["ppv"] = npv, ppv
    return out


def run_mccv(cohort: Cohort, plan: SplitPlan, competitors, knn_k: int = 10,
             sens_target: float = 0.8, n_bins: int = 10, workers: int = 1
             ) -> EvalReport:
    """Run every competitor over the split plan and aggregate the metrics.

    Repetitions that raise a package error (e.g. divergence) are excluded
    from the aggregates and reported in `failures`.
    """
    specs = list(competitors)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise RiskRulesError(f"duplicate competitor names: {names}")
    tasks = [(cohort, plan.index_pairs[i], i, tuple(specs), knn_k, sens_target,
              n_bins, plan.seed) for i in range(plan.repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_repetition, tasks, chunksize=1))
    else:
        results = [_run_repetition(t) for t in tasks]

    ok = [r for r in results if r.error is None]
    failures = tuple((r.rep, r.error) for r in results if r.error is not None)

    metrics: dict = {}
    for name in names:
        metrics[name] = {}
        for split in SPLITS:
            metrics[name][split] = {}
            for metric in METRICS:
                vals = [r.metrics[name][split][metric] for r in ok]
                metrics[name][split][metric] = summarize(vals) if vals else None

    deltas: dict = {}
    if PROPOSED in names and ok:
        for name in names:
            if name == PROPOSED:
                continue
            deltas[name] = {}
            for split in SPLITS:
                deltas[name][split] = {}
                for metric in METRICS:
                    a = [r.metrics[PROPOSED][split][metric] for r in ok]
                    b = [r.metrics[name][split][metric] for r in ok]
                    deltas[name][split][metric] = paired_delta_stats(a, b)

    curves = {name: _aggregate_curves([r.curve_bins.get(name) for r in ok], n_bins)
              for name in names}

    reliability_table = None
    strat_thresholds = None
    rule_thresholds: dict = {}
    if PROPOSED in names and ok:
        rel = np.concatenate([r.reliabilities for r in ok])
        wrong = np.concatenate([r.misclassified for r in ok])
        reliability_table = reliability_bins(rel, wrong)
        strat_thresholds = summarize([r.gm_thresholds[PROPOSED] for r in ok])
        feats = sorted({f for r in ok for f in r.rule_thresholds})
        rule_thresholds = {
            f: float(np.mean([r.rule_thresholds[f] for r in ok if f in r.rule_thresholds]))
            for f in feats}

    return EvalReport(plan.repetitions, plan.train_fraction, plan.seed, tuple(names),
                      len(ok), failures, metrics, deltas, curves, reliability_table,
                      strat_thresholds, rule_thresholds)


def _aggregate_curves(per_rep_bins, n_bins) -> AggregatedCurve:
    usable = [bins for bins in per_rep_bins if bins is not None]
    skipped = len(per_rep_bins) - len(usable)
    if not usable:
        return AggregatedCurve((), float("nan"), float("nan"), 0, skipped)
    agg_bins = []
    mean_points = []
    for b in range(n_bins):
        preds = np.array([bins[b][0] for bins in usable])
        obs = np.array([bins[b][1] for bins in usable])
        counts = np.array([bins[b][2] for bins in usable], dtype=float)
        om = summarize(obs)
        agg_bins.append(CurveBin(float(preds.mean()), om.mean, om.ci_lo, om.ci_hi,
                                 float(counts.mean())))
        mean_points.append((float(preds.mean()), om.mean, float(counts.mean())))
    slope, intercept = fit_calibration_line(mean_points)
    return AggregatedCurve(tuple(agg_bins), slope, intercept, len(usable), skipped)
