"""Command-line entry point.

Subcommands: train, predict, mccv, screen, synth, serve.  Every command is
deterministic given its --seed flag (default 20210501); errors exit nonzero
with a single machine-parseable line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .data import (load_cohort, load_schema, missing_rates, save_cohort, save_schema,
                   univariate_pvalues)
from .errors import RiskRulesError
from .learners import TrainConfig
from .metrics import load_point_score
from .mccv import (LogisticBaselineSpec, NetworkBaselineSpec, PointScoreSpec,
                   ProposedSpec, run_mccv)
from .pipeline import (DEFAULT_SEED, PipelineConfig, fit_pipeline, load_pipeline,
                       predict_batch, save_pipeline)
from .report import (prediction_to_dict, render_figures, render_prediction_text,
                     render_text, screen_to_csv, write_calibration_csvs,
                     write_metrics_csv, write_reliability_csv, write_report_json)
from .rules import describe_rule
from .sampling import make_split_plan
from .service import make_server
from .synth import (default_acs_spec, generate_cohort, inject_missing,
                    load_cohort_spec, save_cohort_spec)

OUTDIR_ENV = "RISKRULES_OUTDIR"


class CliError(RiskRulesError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _outdir(value) -> Path:
    path = Path(value if value else os.environ.get(OUTDIR_ENV, "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def build_parser() -> _Parser:
    parser = _Parser(prog="riskrules", description=__doc__)
    parser.add_argument("--version", action="version", version=f"riskrules {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p):
        p.add_argument("--epochs", type=int, default=2000)
        p.add_argument("--learning-rate", type=float, default=0.1)
        p.add_argument("--l2", type=float, default=0.0)
        p.add_argument("--tolerance", type=float, default=1e-7)

    p = sub.add_parser("train", help="fit a pipeline and write its artifact")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--acceptance-model", choices=("logistic", "network"),
                   default="logistic")
    p.add_argument("--hidden", type=_int_list, default=(8, 4))
    p.add_argument("--undersample-ratio", type=float, default=1.5)
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--rule-features", type=_str_list, default=None)
    p.add_argument("--median-features", type=_str_list, default=())
    add_train_flags(p)

    p = sub.add_parser("predict", help="score patient records with an artifact")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="JSON output path (default stdout only)")

    p = sub.add_parser("mccv", help="Monte-Carlo cross-validation experiment")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--outdir", default=None)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--competitors", type=_str_list, default=("logistic",),
                   help="comma list from: logistic,network,point_score")
    p.add_argument("--point-score", default=None, help="point-score YAML config")
    p.add_argument("--acceptance-model", choices=("logistic", "network"),
                   default="logistic")
    p.add_argument("--hidden", type=_int_list, default=(8, 4))
    p.add_argument("--baseline-hidden", type=_int_list, default=(8, 8))
    p.add_argument("--undersample-ratio", type=float, default=1.5)
    p.add_argument("--knn-k", type=int, default=10)
    p.add_argument("--rule-features", type=_str_list, default=None)
    p.add_argument("--median-features", type=_str_list, default=())
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    add_train_flags(p)

    p = sub.add_parser("screen", help="univariate p-values and missing rates")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--max-missing", type=float, default=0.15)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--out", required=True)
    p.add_argument("--schema-out", default=None)
    p.add_argument("--spec", default=None, help="cohort spec YAML (default: built-in ACS)")
    p.add_argument("--spec-out", default=None, help="write the spec actually used")
    p.add_argument("--n", type=int, default=1111)
    p.add_argument("--prevalence", type=float, default=0.0495)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("serve", help="run the HTTP scoring service")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(max_epochs=args.epochs, learning_rate=args.learning_rate,
                       l2_penalty=args.l2, tolerance=args.tolerance, seed=seed)


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(rule_features=args.rule_features,
                          median_features=args.median_features,
                          model_kind=args.acceptance_model,
                          hidden=args.hidden,
                          train=_train_config(args, args.seed),
                          undersample_ratio=args.undersample_ratio,
                          knn_k=args.knn_k,
                          seed=args.seed)


def cmd_train(args) -> int:
    schema, label = load_schema(args.schema)
    cohort = load_cohort(args.data, schema, label_column=label)
    pipe = fit_pipeline(cohort, _pipeline_config(args))
    save_pipeline(pipe, args.out)
    print(f"wrote {args.out}")
    print(f"rules ({len(pipe.rules)}):")
    for rule in pipe.rules:
        spec = next((f for f in schema if f.name == rule.feature), None)
        print(f"  {rule.feature:<20} {describe_rule(rule, spec)}")
    print(f"calibration: beta0={pipe.calibration.beta0:.4f} "
          f"beta1={pipe.calibration.beta1:.4f}")
    print(f"stratification threshold: {100 * pipe.strat_threshold:.2f}%")
    return 0


def cmd_predict(args) -> int:
    pipe = load_pipeline(args.model)
    cohort = load_cohort(args.input, pipe.schema, label_column=pipe.label_column,
                         require_label_column=False)
    batch = predict_batch(pipe, cohort)
    docs = []
    for i in range(cohort.n):
        imputed = tuple(f.name for f, v in zip(pipe.schema, cohort.values[i])
                        if np.isnan(v))
        pred = batch.prediction(i, imputed)
        print(f"--- record {i + 1} ---")
        print(render_prediction_text(pred, pipe, cohort.values[i]), end="")
        docs.append(prediction_to_dict(pred, pipe))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(docs, fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"wrote {args.out}")
    return 0


def _competitor_specs(args):
    specs = [ProposedSpec(_pipeline_config(args))]
    for name in args.competitors:
        if name == "logistic":
            specs.append(LogisticBaselineSpec(train=_train_config(args, args.seed)))
        elif name == "network":
            specs.append(NetworkBaselineSpec(hidden=args.baseline_hidden,
                                             train=_train_config(args, args.seed)))
        elif name == "point_score":
            if not args.point_score:
                raise CliError("--point-score config required for the point_score "
                               "competitor")
            with open(args.point_score, "r", encoding="utf-8") as fh:
                specs.append(PointScoreSpec(load_point_score(yaml.safe_load(fh))))
        else:
            raise CliError(f"unknown competitor {name!r}")
    return specs


def cmd_mccv(args) -> int:
    outdir = _outdir(args.outdir)
    schema, label = load_schema(args.schema)
    cohort = load_cohort(args.data, schema, label_column=label)
    plan = make_split_plan(cohort, args.reps, args.train_fraction, args.seed)
    report = run_mccv(cohort, plan, _competitor_specs(args), knn_k=args.knn_k,
                      workers=args.workers)
    write_report_json(report, outdir / "report.json")
    (outdir / "report.txt").write_text(render_text(report), encoding="utf-8")
    write_metrics_csv(report, outdir / "per_rep_metrics.csv")
    write_calibration_csvs(report, outdir)
    write_reliability_csv(report, outdir / "reliability_bins.csv")
    if not args.no_figures:
        render_figures(report, outdir)
    print(render_text(report), end="")
    print(f"wrote report files to {outdir}")
    if report.completed < report.repetitions:
        print(f"riskrules: error: {report.repetitions - report.completed} repetitions "
              f"failed", file=sys.stderr)
        return 3
    return 0


def cmd_screen(args) -> int:
    schema, label = load_schema(args.schema)
    cohort = load_cohort(args.data, schema, label_column=label)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pvalues = univariate_pvalues(cohort)
    rates = missing_rates(cohort)
    kinds = {f.name: f.kind for f in schema}
    print(f"{'feature':<22}{'kind':<12}{'p-value':>12}{'missing %':>12}")
    for name in sorted(pvalues, key=lambda n: pvalues[n]):
        flag = " (over missing cutoff)" if rates[name] > args.max_missing else ""
        print(f"{name:<22}{kinds[name]:<12}{pvalues[name]:>12.3g}"
              f"{100 * rates[name]:>11.2f}%{flag}")
    if args.out:
        screen_to_csv(pvalues, rates, kinds, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    if args.spec:
        spec = load_cohort_spec(args.spec)
    else:
        spec = default_acs_spec(n=args.n, prevalence=args.prevalence)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    cohort = generate_cohort(spec)
    if args.missing_rate > 0:
        cohort = inject_missing(cohort, args.missing_rate, seed=spec.seed + 1)
    save_cohort(cohort, args.out)
    if args.schema_out:
        save_schema(spec.schema, args.schema_out)
    if args.spec_out:
        save_cohort_spec(spec, args.spec_out)
    print(f"wrote {args.out} ({cohort.n} records, "
          f"{int(np.nansum(cohort.labels))} positives)")
    return 0


def cmd_serve(args) -> int:
    pipe = load_pipeline(args.model)
    server = make_server(pipe, args.host, args.port)
    host, port = server.server_address[:2]
    print(f"serving {args.model} on http://{host}:{port} (Ctrl-C to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "mccv": cmd_mccv,
            "screen": cmd_screen, "synth": cmd_synth, "serve": cmd_serve}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"riskrules: error: usage: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"riskrules: error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except RiskRulesError as exc:
        print(f"riskrules: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
