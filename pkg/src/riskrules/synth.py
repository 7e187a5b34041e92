"""Synthetic ACS-like cohort generation from per-class marginal summaries.

Continuous features draw from per-class Gaussians (median as location,
IQR/1.349 as scale, clamped to a plausible range); categorical features
draw from per-class level frequencies.  Features are independent within a
class; labels are Bernoulli draws at the configured prevalence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .data import Cohort, FeatureSpec
from .errors import DataError, SchemaError

_IQR_TO_SD = 1.349  # normal-theory conversion


@dataclass(frozen=True)
class ContinuousMarginal:
    location: float
    scale: float
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if self.scale <= 0:
            raise DataError("scale must be positive")


@dataclass(frozen=True)
class CategoricalMarginal:
    probs: tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise DataError("category probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", tuple(float(x) for x in p))


@dataclass(frozen=True)
class FeatureMarginals:
    spec: FeatureSpec
    survivor: ContinuousMarginal | CategoricalMarginal
    deceased: ContinuousMarginal | CategoricalMarginal

    def __post_init__(self):
        want = ContinuousMarginal if self.spec.kind == "continuous" else CategoricalMarginal
        if not (isinstance(self.survivor, want) and isinstance(self.deceased, want)):
            raise DataError(f"feature {self.spec.name!r}: marginal type mismatch")
        if isinstance(self.survivor, CategoricalMarginal):
            for m in (self.survivor, self.deceased):
                if len(m.probs) != self.spec.n_levels:
                    raise DataError(f"feature {self.spec.name!r}: wrong probability count")


@dataclass(frozen=True)
class CohortSpec:
    n: int
    prevalence: float
    seed: int
    features: tuple[FeatureMarginals, ...]

    def __post_init__(self):
        if self.n < 1:
            raise DataError("cohort size must be at least 1")
        if not 0.0 <= self.prevalence <= 1.0:
            raise DataError("prevalence must lie in [0, 1]")
        object.__setattr__(self, "features", tuple(self.features))

    @property
    def schema(self) -> tuple[FeatureSpec, ...]:
        return tuple(f.spec for f in self.features)


def _freq(counts) -> tuple[float, ...]:
    c = np.asarray(counts, dtype=float)
    return tuple(c / c.sum())


def _cont(median: float, q1: float, q3: float, lo: float, hi: float) -> ContinuousMarginal:
    return ContinuousMarginal(median, (q3 - q1) / _IQR_TO_SD, lo, hi)


def default_acs_spec(n: int = 1111, prevalence: float = 0.0495,
                     seed: int = 15) -> CohortSpec:
    """The six-variable ACS cohort, parameterized from published per-class
    summaries (survivor / deceased medians, IQRs and level counts).
    """
    features = (
        FeatureMarginals(
            FeatureSpec("diagnosis", "ordinal", ("UA", "NSTEMI", "STEMI")),
            CategoricalMarginal(_freq([244, 433, 369])),
            CategoricalMarginal(_freq([3, 19, 33]))),
        FeatureMarginals(
            FeatureSpec("age", "continuous"),
            _cont(64, 54, 73, 18, 110),
            _cont(72, 63, 81, 18, 110)),
        FeatureMarginals(
            FeatureSpec("sbp", "continuous"),
            _cont(140, 121, 160, 50, 260),
            _cont(130, 107, 150, 50, 260)),
        FeatureMarginals(
            FeatureSpec("heart_rate", "continuous"),
            _cont(75, 64, 87, 20, 250),
            _cont(90, 76, 105, 20, 250)),
        FeatureMarginals(
            FeatureSpec("killip", "ordinal", ("I", "II", "III", "IV")),
            CategoricalMarginal(_freq([888, 92, 54, 6])),
            CategoricalMarginal(_freq([27, 11, 11, 4]))),
        FeatureMarginals(
            FeatureSpec("prior_stroke", "binary", ("no", "yes")),
            CategoricalMarginal(_freq([985, 71])),
            CategoricalMarginal(_freq([41, 14]))),
    )
    return CohortSpec(n, prevalence, seed, features)


def generate_cohort(spec: CohortSpec) -> Cohort:
    """Draw a cohort; deterministic for a given spec (seed included)."""
    rng = np.random.default_rng(spec.seed)
    labels = (rng.random(spec.n) < spec.prevalence).astype(float)
    values = np.empty((spec.n, len(spec.features)))
    for j, fm in enumerate(spec.features):
        col = np.empty(spec.n)
        for cls, marg in ((0.0, fm.survivor), (1.0, fm.deceased)):
            sel = labels == cls
            m = int(sel.sum())
            if isinstance(marg, ContinuousMarginal):
                draw = rng.normal(marg.location, marg.scale, size=m)
                col[sel] = np.clip(draw, marg.lo, marg.hi)
            else:
                levels = rng.choice(len(marg.probs), size=m, p=marg.probs)
                offset = 0.0 if fm.spec.kind == "binary" else 1.0
                col[sel] = levels + offset
        values[:, j] = col
    return Cohort(spec.schema, values, labels)


def inject_missing(cohort: Cohort, rate: float, seed: int) -> Cohort:
    """Blank each feature cell independently with the given probability."""
    if not 0.0 <= rate < 1.0:
        raise DataError("missing rate must lie in [0, 1)")
    if rate == 0.0:
        return cohort
    rng = np.random.default_rng(seed)
    mask = rng.random(cohort.values.shape) < rate
    values = np.where(mask, np.nan, cohort.values)
    return Cohort(cohort.schema, values, cohort.labels)


# ---------------------------------------------------------------------------
# spec files (same YAML style as schema files)


def load_cohort_spec(path) -> CohortSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"unreadable cohort spec {path}: {exc}") from None
    try:
        features = []
        for entry in doc["features"]:
            spec = FeatureSpec(str(entry["name"]), str(entry["kind"]),
                               tuple(str(v) for v in entry.get("levels", ())))
            marginals = []
            for key in ("survivor", "deceased"):
                m = entry[key]
                if spec.kind == "continuous":
                    lo, hi = entry.get("range", (-np.inf, np.inf))
                    marginals.append(ContinuousMarginal(float(m["location"]),
                                                        float(m["scale"]),
                                                        float(lo), float(hi)))
                else:
                    marginals.append(CategoricalMarginal(tuple(float(p) for p in m["probs"])))
            features.append(FeatureMarginals(spec, *marginals))
        return CohortSpec(int(doc["n"]), float(doc["prevalence"]),
                          int(doc.get("seed", 0)), tuple(features))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"invalid cohort spec {path}: {exc}") from None


def save_cohort_spec(spec: CohortSpec, path) -> None:
    doc = {"n": spec.n, "prevalence": spec.prevalence, "seed": spec.seed, "features": []}
    for fm in spec.features:
        entry: dict = {"name": fm.spec.name, "kind": fm.spec.kind}
        if fm.spec.levels:
            entry["levels"] = list(fm.spec.levels)
        if isinstance(fm.survivor, ContinuousMarginal):
            entry["range"] = [fm.survivor.lo, fm.survivor.hi]
            for key, m in (("survivor", fm.survivor), ("deceased", fm.deceased)):
                entry[key] = {"location": m.location, "scale": m.scale}
        else:
            for key, m in (("survivor", fm.survivor), ("deceased", fm.deceased)):
                entry[key] = {"probs": list(m.probs)}
        doc["features"].append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
