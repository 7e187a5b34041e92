"""Rendering of evaluation reports (text, CSV, JSON, figures) and of
single-patient predictions.

Figures are written as PNG files next to the delimited tables; all numeric
table output renders percentages to two decimals.
"""

from __future__ import annotations

import csv
import dataclasses
import json

import numpy as np

from .data import Cohort
from .mccv import PROPOSED, EvalReport, MetricSummary
from .pipeline import FittedPipeline, Prediction
from .rules import describe_rule

REPORT_ARTIFACT = "riskrules-eval-report"
REPORT_VERSION = 1


def _pct(x: float) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{100.0 * x:.2f}"


def _ci(ms: MetricSummary) -> str:
    return f"[{_pct(ms.ci_lo)}, {_pct(ms.ci_hi)}]"


def report_to_dict(report: EvalReport) -> dict:
    def ms(d):
        if d is None:
            return None
        return {"mean": d.mean, "ci_lo": d.ci_lo, "ci_hi": d.ci_hi,
                "per_rep": list(d.per_rep)}

    doc = {
        "artifact": REPORT_ARTIFACT,
        "artifact_version": REPORT_VERSION,
        "repetitions": report.repetitions,
        "train_fraction": report.train_fraction,
        "seed": report.seed,
        "models": list(report.models),
        "completed": report.completed,
        "failures": [{"repetition": r, "error": e} for r, e in report.failures],
        "metrics": {m: {s: {k: ms(v) for k, v in split.items()}
                        for s, split in model.items()}
                    for m, model in report.metrics.items()},
        "deltas": {m: {s: {k: ms(v) for k, v in split.items()}
                       for s, split in model.items()}
                   for m, model in report.deltas.items()},
        "calibration_curves": {
            m: {"slope": c.slope, "intercept": c.intercept, "reps_used": c.reps_used,
                "reps_skipped": c.reps_skipped,
                "bins": [dataclasses.asdict(b) for b in c.bins]}
            for m, c in report.calibration_curves.items()},
        "strat_thresholds": ms(report.strat_thresholds),
        "rule_thresholds": dict(report.rule_thresholds),
    }
    if report.reliability_table is not None:
        t = report.reliability_table
        doc["reliability_table"] = {
            "edges": list(t.edges), "counts": list(t.counts),
            "error_rates": [None if np.isnan(r) else r for r in t.error_rates],
            "chi_squared": None if np.isnan(t.chi_squared) else t.chi_squared,
            "p_value": None if np.isnan(t.p_value) else t.p_value,
            "dof": t.dof, "merged_bins": t.merged_bins}
    else:
        doc["reliability_table"] = None
    return doc


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, sort_keys=True, indent=1)
        fh.write("\n")


def render_text(report: EvalReport) -> str:
    lines = []
    lines.append(f"Monte-Carlo cross-validation: {report.completed}/{report.repetitions} "
                 f"repetitions completed (train fraction {report.train_fraction}, "
                 f"seed {report.seed})")
    if report.failures:
        lines.append(f"  excluded repetitions: {len(report.failures)}")
    lines.append("")
    lines.append("Metrics (%, 95% CI over repetitions)")
    header = f"{'model':<14}{'split':<8}" + "".join(f"{m.upper():>18}" for m in ("auc", "gm", "npv", "ppv"))
    lines.append(header)
    for model in report.models:
        for split in ("train", "test"):
            row = f"{model:<14}{split:<8}"
            for metric in ("auc", "gm", "npv", "ppv"):
                ms = report.metrics[model][split][metric]
                row += f"{_ci(ms):>18}" if ms else f"{'-':>18}"
            lines.append(row)
    if report.deltas:
        lines.append("")
        lines.append(f"Paired deltas ({PROPOSED} minus model, %, 95% CI)")
        for model, splits in report.deltas.items():
            for split in ("train", "test"):
                row = f"{model:<14}{split:<8}"
                for metric in ("auc", "gm", "npv", "ppv"):
                    row += f"{_ci(splits[split][metric]):>18}"
                lines.append(row)
    if report.strat_thresholds is not None:
        ms = report.strat_thresholds
        lines.append("")
        lines.append(f"Stratification threshold (risk): mean {_pct(ms.mean)}% "
                     f"CI {_ci(ms)}")
    if report.rule_thresholds:
        lines.append("")
        lines.append("Mean rule thresholds over repetitions")
        for feat, thr in report.rule_thresholds.items():
            lines.append(f"  {feat:<20} {thr:.4f}")
    lines.append("")
    lines.append("Calibration (testing deciles)")
    for model, curve in report.calibration_curves.items():
        lines.append(f"  {model:<14} slope {curve.slope:.3f}  intercept "
                     f"{curve.intercept:.4f}  reps used {curve.reps_used}"
                     + (f"  (skipped {curve.reps_skipped})" if curve.reps_skipped else ""))
    if report.reliability_table is not None:
        t = report.reliability_table
        lines.append("")
        lines.append("Reliability bins (pooled test predictions)")
        lines.append(f"{'bin':<14}{'count':>10}{'error rate %':>15}")
        for b in range(10):
            lo, hi = t.edges[b], t.edges[b + 1]
            rate = t.error_rates[b]
            rate_s = "-" if np.isnan(rate) else f"{100 * rate:.2f}"
            lines.append(f"[{lo:.1f}, {hi:.1f}){'':<4}{t.counts[b]:>10}{rate_s:>15}")
        chi = "nan" if np.isnan(t.chi_squared) else f"{t.chi_squared:.2f}"
        pv = "nan" if np.isnan(t.p_value) else f"{t.p_value:.3g}"
        lines.append(f"chi-squared {chi} (dof {t.dof}), p-value {pv}"
                     + (f", merged bins {t.merged_bins}" if t.merged_bins else ""))
    return "\n".join(lines) + "\n"


def write_metrics_csv(report: EvalReport, path) -> None:
    """Per-repetition metric rows for downstream analysis."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repetition", "model", "split", "auc", "gm", "npv", "ppv"])
        reps = [i for i in range(report.repetitions)
                if i not in {r for r, _ in report.failures}]
        for model in report.models:
            for split in ("train", "test"):
                series = {m: report.metrics[model][split][m].per_rep
                          for m in ("auc", "gm", "npv", "ppv")}
                for row_i, rep in enumerate(reps):
                    writer.writerow([rep, model, split] +
                                    [repr(series[m][row_i]) for m in series])


def write_calibration_csvs(report: EvalReport, outdir) -> list:
    paths = []
    for model, curve in report.calibration_curves.items():
        path = outdir / f"calibration_{model}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "predicted", "observed", "observed_lo",
                             "observed_hi", "count"])
            for i, b in enumerate(curve.bins):
                writer.writerow([i, repr(b.predicted), repr(b.observed),
                                 repr(b.observed_lo), repr(b.observed_hi),
                                 repr(b.count)])
        paths.append(path)
    return paths


def write_reliability_csv(report: EvalReport, path) -> None:
    t = report.reliability_table
    if t is None:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count", "error_rate"])
        for b in range(10):
            rate = t.error_rates[b]
            writer.writerow([t.edges[b], t.edges[b + 1], t.counts[b],
                             "" if np.isnan(rate) else repr(rate)])


def render_figures(report: EvalReport, outdir) -> list:
    """Calibration curves, reliability bins and metric boxplots as PNGs."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for model, curve in report.calibration_curves.items():
        if not curve.bins:
            continue
        fig, ax = plt.subplots(figsize=(5, 4))
        pred = [b.predicted for b in curve.bins]
        obs = [b.observed for b in curve.bins]
        err = [[b.observed - b.observed_lo for b in curve.bins],
               [b.observed_hi - b.observed for b in curve.bins]]
        ax.errorbar(pred, obs, yerr=err, fmt="o-", capsize=3, label=model)
        lim = max(max(pred), max(obs)) * 1.05
        ax.plot([0, lim], [0, lim], "k--", lw=1, label="ideal")
        ax.set_xlabel("mean predicted risk")
        ax.set_ylabel("observed event rate")
        ax.set_title(f"Calibration: {model} (slope {curve.slope:.2f})")
        ax.legend()
        fig.tight_layout()
        path = outdir / f"calibration_{model}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    t = report.reliability_table
    if t is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        centers = [(t.edges[b] + t.edges[b + 1]) / 2 for b in range(10)]
        rates = [np.nan if np.isnan(r) else 100 * r for r in t.error_rates]
        ax2 = ax.twinx()
        ax2.bar(centers, t.counts, width=0.08, color="0.85", label="count")
        ax2.set_ylabel("patients per bin")
        ax.plot(centers, rates, "o-", color="C3")
        ax.set_xlabel("predicted reliability estimate")
        ax.set_ylabel("misclassification rate (%)")
        pv = "nan" if np.isnan(t.p_value) else f"{t.p_value:.2g}"
        ax.set_title(f"Misclassification by reliability (chi-squared p={pv})")
        ax.set_zorder(ax2.get_zorder() + 1)
        ax.patch.set_visible(False)
        fig.tight_layout()
        path = outdir / "reliability_bins.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)

    for metric in ("auc", "gm"):
        fig, ax = plt.subplots(figsize=(5, 4))
        series = [report.metrics[m]["test"][metric].per_rep for m in report.models]
        ax.boxplot(series, tick_labels=list(report.models))
        ax.set_ylabel(f"test {metric.upper()}")
        ax.set_title(f"Test {metric.upper()} over {report.completed} repetitions")
        fig.tight_layout()
        path = outdir / f"boxplot_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# single-patient rendering


def prediction_to_dict(pred: Prediction, pipeline: FittedPipeline) -> dict:
    rules = {r.feature: r for r in pipeline.rules}
    per_rule = []
    for rr in pred.per_rule:
        spec = _spec_for(pipeline, rr.feature)
        per_rule.append({"feature": rr.feature,
                         "rule_text": describe_rule(rules[rr.feature], spec),
                         "output": rr.output,
                         "acceptance": rr.acceptance})
    return {"per_rule": per_rule, "score_t": pred.score_t, "score_s": pred.score_s,
            "risk": pred.risk, "reliability": pred.reliability,
            "stratum": pred.stratum,
            "imputed_features": list(pred.imputed_features)}


def _spec_for(pipeline: FittedPipeline, expanded_name: str):
    for f in pipeline.schema:
        if f.name == expanded_name:
            return f
    return None  # one-hot indicator; rendered as a plain binary rule


def render_prediction_text(pred: Prediction, pipeline: FittedPipeline,
                           record_values=None) -> str:
    rules = {r.feature: r for r in pipeline.rules}
    raw_names = tuple(f.name for f in pipeline.schema)
    lines = [f"{'Feature / Rule':<22}{'Value':>12}{'Output':>8}{'Acceptance':>12}"]
    for rr in pred.per_rule:
        value = ""
        if record_values is not None and rr.feature in raw_names:
            j = raw_names.index(rr.feature)
            spec = pipeline.schema[j]
            v = record_values[j]
            if np.isnan(v):
                value = "(imputed)"
            elif spec.kind == "continuous":
                value = f"{float(v):g}"
            else:
                value = spec.format_value(float(v))
        lines.append(f"{rr.feature:<22}{value:>12}{rr.output:>8}"
                     f"{100 * rr.acceptance:>11.2f}%")
    lines.append(f"Predicted mortality score: {pred.score_s:.4f}")
    lines.append(f"Predicted mortality risk: {100 * pred.risk:.2f}%")
    lines.append(f"Predicted reliability estimate: {100 * pred.reliability:.2f}%")
    lines.append(f"Stratification: {pred.stratum}-risk group "
                 f"(mortality risk >= {100 * pipeline.strat_threshold:.2f}%)")
    if pred.imputed_features:
        lines.append(f"Imputed features: {', '.join(pred.imputed_features)}")
    return "\n".join(lines) + "\n"


def screen_to_csv(pvalues: dict, rates: dict, kinds: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "kind", "p_value", "missing_rate"])
        for name in sorted(pvalues, key=lambda n: pvalues[n]):
            writer.writerow([name, kinds[name], repr(pvalues[name]),
                             repr(rates[name])])
