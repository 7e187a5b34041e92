"""Discrimination and calibration metrics, reliability-bin analysis, and a
configurable additive point-score comparator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import Cohort, FeatureSpec, PatientRecord
from .errors import DataError, DegenerateMetricWarning
from .learners import sigmoid


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def sensitivity(self) -> float:
        if self.tp + self.fn == 0:
            raise DataError("no positives; sensitivity undefined")
        return self.tp / (self.tp + self.fn)

    @property
    def specificity(self) -> float:
        if self.tn + self.fp == 0:
            raise DataError("no negatives; specificity undefined")
        return self.tn / (self.tn + self.fp)


def _as_score_label(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=float)
    if s.shape != y.shape or s.ndim != 1:
        raise DataError("scores and labels must be matching vectors")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("labels must be binary")
    return s, y


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 * P(tie), via midranks."""
    s, y = _as_score_label(scores, labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes")
    ranks = stats.rankdata(s)
    rank_sum = ranks[y == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def confusion_at(scores, labels, cutoff: float) -> ConfusionCounts:
    """Counts with 'predicted positive' meaning score >= cutoff."""
    s, y = _as_score_label(scores, labels)
    pred = s >= cutoff
    return ConfusionCounts(tp=int((pred & (y == 1)).sum()),
                           tn=int((~pred & (y == 0)).sum()),
                           fp=int((pred & (y == 0)).sum()),
                           fn=int((~pred & (y == 1)).sum()))


def geometric_mean(c: ConfusionCounts) -> float:
    return math.sqrt(c.sensitivity * c.specificity)


def sensitivity_cutoff(reference_scores, reference_labels, target_sens: float) -> float:
    """Largest cutoff whose sensitivity on the reference set reaches the target."""
    s, y = _as_score_label(reference_scores, reference_labels)
    pos = np.sort(s[y == 1])[::-1]
    if pos.size == 0:
        raise DataError("target sensitivity unreachable: no positives in reference")
    if not 0.0 < target_sens <= 1.0:
        raise DataError("target sensitivity must lie in (0, 1]")
    needed = int(math.ceil(target_sens * pos.size))
    return float(pos[needed - 1])


def npv_ppv_at_sensitivity(scores, labels, target_sens, reference_scores,
                           reference_labels) -> tuple[float, float, float]:
    """NPV and PPV at a cutoff reaching `target_sens` on the reference set.

    Zero-denominator cases report NPV=1 and PPV=0 with a warning rather
    than dropping the repetition.
    """
    cutoff = sensitivity_cutoff(reference_scores, reference_labels, target_sens)
    c = confusion_at(scores, labels, cutoff)
    if c.tn + c.fn == 0:
        warnings.warn("no predicted negatives; NPV reported as 1",
                      DegenerateMetricWarning, stacklevel=2)
        npv = 1.0
    else:
        npv = c.tn / (c.tn + c.fn)
    if c.tp + c.fp == 0:
        warnings.warn("no predicted positives; PPV reported as 0",
                      DegenerateMetricWarning, stacklevel=2)
        ppv = 0.0
    else:
        ppv = c.tp / (c.tp + c.fp)
    return float(npv), float(ppv), cutoff


@dataclass(frozen=True)
class CalibrationCurve:
    bins: tuple[tuple[float, float, int], ...]  # (mean predicted, observed rate, count)
    slope: float
    intercept: float
    merged: bool  # fewer distinct risks than requested bins


def calibration_curve(risks, labels, n_bins: int = 10) -> CalibrationCurve:
    """Equal-frequency binning of predicted risks against observed rates.

    The slope/intercept come from a count-weighted least-squares line
    through the bin points; with a single bin the line is undefined (NaN,
    flagged).
    """
    r, y = _as_score_label(risks, labels)
    if ((r <= 0) | (r >= 1)).any():
        raise DataError("risks must lie strictly inside (0, 1)")
    if n_bins < 1:
        raise DataError("n_bins must be at least 1")
    qs = np.quantile(r, np.arange(1, n_bins) / n_bins)
    edges = np.unique(qs)
    idx = np.searchsorted(edges, r, side="right")
    used = np.unique(idx)
    merged = used.size < n_bins
    if merged:
        warnings.warn(f"only {used.size} distinct risk bins (requested {n_bins})",
                      DegenerateMetricWarning, stacklevel=2)
    bins = []
    for b in used:
        sel = idx == b
        bins.append((float(r[sel].mean()), float(y[sel].mean()), int(sel.sum())))
    slope, intercept = fit_calibration_line(bins)
    return CalibrationCurve(tuple(bins), slope, intercept, merged)


def fit_calibration_line(bins) -> tuple[float, float]:
    """Count-weighted least squares of observed rate on mean predicted risk."""
    pts = [(p, o, c) for p, o, c in bins if c > 0]
    if len(pts) < 2:
        return float("nan"), float("nan")
    p = np.array([b[0] for b in pts])
    o = np.array([b[1] for b in pts])
    w = np.array([b[2] for b in pts], dtype=float)
    pw = np.average(p, weights=w)
    ow = np.average(o, weights=w)
    var = np.average((p - pw) ** 2, weights=w)
    if var == 0:
        return float("nan"), float("nan")
    cov = np.average((p - pw) * (o - ow), weights=w)
    slope = cov / var
    return float(slope), float(ow - slope * pw)


RELIABILITY_EDGES = tuple(np.round(np.arange(0.0, 1.01, 0.1), 10))


@dataclass(frozen=True)
class ReliabilityBinTable:
    edges: tuple[float, ...]  # 0.0, 0.1, ..., 1.0
    counts: tuple[int, ...]  # per bin
    error_rates: tuple[float, ...]  # misclassification rate; NaN for empty bins
    chi_squared: float
    p_value: float
    dof: int
    merged_bins: int  # bins folded into a neighbor for low expected counts


def reliability_bins(reliabilities, misclassified) -> ReliabilityBinTable:
    """Misclassification rate across ten fixed-width reliability bins.

    The chi-squared statistic tests association between bin membership and
    misclassification; empty bins are excluded, and occupied bins whose
    expected error count falls below 1 are folded into their left neighbor.
    """
    rel, wrong = _as_score_label(reliabilities, misclassified)
    if ((rel < 0) | (rel > 1)).any():
        raise DataError("reliabilities must lie in [0, 1]")
    idx = np.minimum((rel * 10).astype(int), 9)
    counts = np.array([(idx == b).sum() for b in range(10)])
    errors = np.array([wrong[idx == b].sum() for b in range(10)])
    rates = np.where(counts > 0, errors / np.maximum(counts, 1), np.nan)

    stat, p, dof, merged = _chi_squared_2xk(counts, errors)
    return ReliabilityBinTable(RELIABILITY_EDGES, tuple(int(c) for c in counts),
                               tuple(float(x) for x in rates), stat, p, dof, merged)


def _chi_squared_2xk(counts: np.ndarray, errors: np.ndarray
                     ) -> tuple[float, float, int, int]:
    occupied = counts > 0
    cnt = counts[occupied].astype(float)
    err = errors[occupied].astype(float)
    total_rate = err.sum() / cnt.sum() if cnt.sum() else 0.0

    # fold bins with expected error count < 1 into the previous kept bin
    merged = 0
    fold_cnt, fold_err = [], []
    for c, e in zip(cnt, err):
        if fold_cnt and min(c * total_rate, c * (1 - total_rate)) < 1.0:
            fold_cnt[-1] += c
            fold_err[-1] += e
            merged += 1
        else:
            fold_cnt.append(c)
            fold_err.append(e)
    cnt = np.array(fold_cnt)
    err = np.array(fold_err)
    if cnt.size < 2 or err.sum() == 0 or err.sum() == cnt.sum():
        warnings.warn("chi-squared undefined: association table degenerate",
                      DegenerateMetricWarning, stacklevel=3)
        return float("nan"), float("nan"), 0, merged

    observed = np.vstack([err, cnt - err])
    col_tot = cnt
    row_tot = observed.sum(axis=1)
    expected = np.outer(row_tot, col_tot) / cnt.sum()
    stat = float(((observed - expected) ** 2 / expected).sum())
    dof = cnt.size - 1
    return stat, float(stats.chi2.sf(stat, dof)), dof, merged


# ---------------------------------------------------------------------------
# additive point-score comparator (user-configurable)


@dataclass(frozen=True)
class ScoreBand:
    lo: float  # inclusive
    hi: float  # exclusive (math.inf for the last band)
    points: float


@dataclass(frozen=True)
class RiskMapping:
    kind: str  # "logistic" | "table"
    beta0: float = 0.0
    beta1: float = 0.0
    table: tuple[ScoreBand, ...] = ()  # bands mapping total score -> risk

    def risk(self, score: float) -> float:
        if self.kind == "logistic":
            return float(sigmoid(self.beta0 + self.beta1 * score))
        for band in self.table:
            if band.lo <= score < band.hi:
                return band.points
        raise DataError(f"total score {score} outside the risk table")


@dataclass(frozen=True)
class PointScoreModel:
    """Additive scoring system: per-feature points, then score -> risk/category."""

    numeric_bands: dict[str, tuple[ScoreBand, ...]]
    category_points: dict[str, dict[str, float]]  # level name -> points
    risk_mapping: RiskMapping
    categories: tuple[tuple[str, float], ...]  # (name, min total score), ascending

    @property
    def high_cutoff(self) -> float:
        return self.categories[-1][1]

    def features(self) -> tuple[str, ...]:
        return tuple(self.numeric_bands) + tuple(self.category_points)


def point_score_predict(model: PointScoreModel, record: PatientRecord,
                        schema) -> tuple[float, float, str]:
    """Total points, mapped risk and risk category for one complete record.

    Any intermediate category folds into 'low' for two-group metrics; only
    the top category counts as high risk.
    """
    by_name = {f.name: (i, f) for i, f in enumerate(schema)}
    total = 0.0
    for name, bands in model.numeric_bands.items():
        if name not in by_name:
            raise DataError(f"point-score feature {name!r} not in schema")
        i, _ = by_name[name]
        v = float(record.values[i])
        if math.isnan(v):
            raise DataError(f"point-score feature {name!r} is missing")
        for band in bands:
            if band.lo <= v < band.hi:
                total += band.points
                break
        else:
            raise DataError(f"value {v} of {name!r} outside configured breakpoints")
    for name, level_points in model.category_points.items():
        if name not in by_name:
            raise DataError(f"point-score feature {name!r} not in schema")
        i, feat = by_name[name]
        v = float(record.values[i])
        if math.isnan(v):
            raise DataError(f"point-score feature {name!r} is missing")
        level = _level_name(feat, v)
        if level not in level_points:
            raise DataError(f"level {level!r} of {name!r} has no configured points")
        total += level_points[level]

    risk = model.risk_mapping.risk(total)
    category = model.categories[0][0]
    for name, lo in model.categories:
        if total >= lo:
            category = name
    return total, risk, category


def _level_name(feat: FeatureSpec, value: float) -> str:
    if feat.kind == "binary":
        levels = feat.levels or ("0", "1")
        return levels[int(round(value))]
    if feat.kind in ("ordinal", "nominal"):
        return feat.levels[int(round(value)) - 1]
    raise DataError(f"feature {feat.name!r} is continuous; use numeric bands")


def point_score_batch(model: PointScoreModel, cohort: Cohort
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(scores, risks, is_high) over a complete cohort."""
    scores, risks, high = [], [], []
    for i in range(cohort.n):
        sc, rk, cat = point_score_predict(model, cohort.record(i), cohort.schema)
        scores.append(sc)
        risks.append(rk)
        high.append(cat == model.categories[-1][0])
    return np.array(scores), np.array(risks), np.array(high, dtype=bool)


def load_point_score(doc: dict) -> PointScoreModel:
    """Build a point-score model from a parsed YAML/JSON mapping."""
    try:
        numeric: dict[str, tuple[ScoreBand, ...]] = {}
        categorical: dict[str, dict[str, float]] = {}
        for name, spec in doc["features"].items():
            if "bands" in spec:
                bands = []
                for band in spec["bands"]:
                    lo = float(band.get("min", -math.inf))
                    hi = float(band.get("max", math.inf))
                    bands.append(ScoreBand(lo, hi, float(band["points"])))
                numeric[name] = tuple(bands)
            elif "levels" in spec:
                categorical[name] = {str(k): float(v) for k, v in spec["levels"].items()}
            else:
                raise DataError(f"feature {name!r} needs 'bands' or 'levels'")
        risk_doc = doc["risk"]
        if risk_doc["kind"] == "logistic":
            mapping = RiskMapping("logistic", float(risk_doc["beta0"]),
                                  float(risk_doc["beta1"]))
        elif risk_doc["kind"] == "table":
            rows = tuple(ScoreBand(float(r.get("min", -math.inf)),
                                   float(r.get("max", math.inf)),
                                   float(r["risk"])) for r in risk_doc["rows"])
            mapping = RiskMapping("table", table=rows)
        else:
            raise DataError(f"unknown risk mapping kind {risk_doc['kind']!r}")
        cats = tuple((str(c["name"]), float(c["min_score"])) for c in doc["categories"])
        if len(cats) < 2:
            raise DataError("point-score model needs at least 2 risk categories")
        return PointScoreModel(numeric, categorical, mapping, cats)
    except (KeyError, TypeError) as exc:
        raise DataError(f"invalid point-score configuration: {exc}") from None
