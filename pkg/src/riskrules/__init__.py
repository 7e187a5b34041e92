"""Rule-based clinical risk prediction with per-patient reliability estimates."""

__version__ = "0.1.0"

from .data import (Cohort, FeatureSpec, PatientRecord, load_cohort, load_schema,
                   missing_rate_screen, one_hot_expand, save_cohort, save_schema,
                   univariate_pvalues)
from .errors import (ArtifactError, CalibrationError, ConvergenceError, DataError,
                     DegenerateRuleError, RiskRulesError, SchemaError)
from .impute import knn_impute
from .learners import (LogisticModel, NetworkModel, TrainConfig, fit_logistic,
                       fit_network, predict_proba)
from .pipeline import (DEFAULT_SEED, BatchPrediction, Calibration, FittedPipeline,
                       PipelineConfig, Prediction, fit_calibration, fit_pipeline,
                       load_pipeline, mortality_score, predict_batch, predict_patient,
                       reliability, risk_from_score, save_pipeline,
                       select_strat_threshold)
from .rules import (Rule, RuleEvaluation, acceptance_labels, describe_rule,
                    evaluate_rule, fit_rule, normalized_distance)
from .sampling import (SplitPlan, derive_subseed, make_split_plan, stratified_split,
                       undersample_negatives)
from .synth import CohortSpec, default_acs_spec, generate_cohort, inject_missing

__all__ = [name for name in dir() if not name.startswith("_")]
