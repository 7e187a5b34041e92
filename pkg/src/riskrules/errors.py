"""Exception and warning types shared across the package."""


class RiskRulesError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(RiskRulesError, ValueError):
    """Invalid feature schema or schema file."""


class DataError(RiskRulesError, ValueError):
    """Malformed dataset content (bad cell, unknown column, bad label)."""


class DegenerateRuleError(RiskRulesError, ValueError):
    """Rule fitting failed (single class, or equal class centroids)."""


class ConvergenceError(RiskRulesError, RuntimeError):
    """Model training diverged or failed to converge."""


class CalibrationError(RiskRulesError, ValueError):
    """Calibration fit is unidentifiable (e.g. constant scores)."""


class ArtifactError(RiskRulesError, ValueError):
    """Pipeline or report artifact is corrupt or has an unsupported version."""


class ConstantFeatureWarning(UserWarning):
    """A screened feature takes a single value; its p-value is reported as 1."""


class ImputationFallbackWarning(UserWarning):
    """A missing cell had no observed neighbor values; column statistic used."""


class DegenerateMetricWarning(UserWarning):
    """A metric hit a zero denominator or merged bins; value flagged."""
