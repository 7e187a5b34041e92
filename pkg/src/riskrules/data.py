"""Cohort schema, CSV ingestion, one-hot encoding and univariate screening.

A cohort is a feature matrix of floats where NaN marks a missing cell, plus
a label vector (NaN for records without an outcome).  Ordinal and nominal
categories are stored as 1-based level indices; binary features as 0/1.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy import stats

from .errors import ConstantFeatureWarning, DataError, SchemaError

KINDS = ("continuous", "ordinal", "binary", "nominal")
CATEGORICAL_KINDS = ("ordinal", "binary", "nominal")
DEFAULT_LABEL_COLUMN = "label"


@dataclass(frozen=True)
class FeatureSpec:
    """One input variable: its name, kind and (for categories) level names."""

    name: str
    kind: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(self.levels))
        if self.kind in ("ordinal", "nominal") and not self.levels:
            raise SchemaError(f"feature {self.name!r}: {self.kind} features need levels")
        if self.kind == "binary" and self.levels and len(self.levels) != 2:
            raise SchemaError(f"feature {self.name!r}: binary features take exactly 2 levels")
        if self.kind == "continuous" and self.levels:
            raise SchemaError(f"feature {self.name!r}: continuous features take no levels")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"feature {self.name!r}: duplicate levels")

    @property
    def n_levels(self) -> int:
        if self.kind == "binary" and not self.levels:
            return 2
        return len(self.levels)

    def parse_cell(self, cell: str) -> float:
        """Convert a CSV cell to the numeric encoding for this feature."""
        text = cell.strip()
        if self.kind == "continuous":
            try:
                return float(text)
            except ValueError:
                raise DataError(f"unparseable numeric cell {cell!r}") from None
        if self.kind == "binary":
            if self.levels and text in self.levels:
                return float(self.levels.index(text))
            if text in ("0", "1"):
                return float(text)
            raise DataError(f"unknown binary value {cell!r}")
        # ordinal / nominal: level name, or a 1-based index
        if text in self.levels:
            return float(self.levels.index(text) + 1)
        try:
            idx = int(text)
        except ValueError:
            raise DataError(f"unknown category level {cell!r}") from None
        if 1 <= idx <= len(self.levels):
            return float(idx)
        raise DataError(f"category index {cell!r} outside 1..{len(self.levels)}")

    def format_value(self, value: float) -> str:
        """Inverse of parse_cell, used when writing cohorts back to CSV."""
        if math.isnan(value):
            return ""
        if self.kind == "continuous":
            return repr(float(value))
        if self.kind == "binary":
            idx = int(round(value))
            if self.levels:
                return self.levels[idx]
            return str(idx)
        return self.levels[int(round(value)) - 1]

    def validate_value(self, value: float) -> None:
        if math.isnan(value):
            return
        if self.kind == "binary" and value not in (0.0, 1.0):
            raise DataError(f"feature {self.name!r}: binary value must be 0/1, got {value}")
        if self.kind in ("ordinal", "nominal"):
            if value != int(value) or not (1 <= value <= len(self.levels)):
                raise DataError(
                    f"feature {self.name!r}: level index {value} outside 1..{len(self.levels)}"
                )


@dataclass(frozen=True)
class PatientRecord:
    """Feature vector (NaN = missing) with an optional binary outcome."""

    values: np.ndarray
    label: int | None = None


@dataclass(frozen=True)
class Cohort:
    """A schema plus the record matrix; treated as immutable once built."""

    schema: tuple[FeatureSpec, ...]
    values: np.ndarray  # (n, d) float64, NaN = missing
    labels: np.ndarray  # (n,) float64, NaN = unknown outcome

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        values = np.asarray(self.values, dtype=float)
        labels = np.asarray(self.labels, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.schema):
            raise DataError("value matrix shape does not match schema")
        if labels.shape != (values.shape[0],):
            raise DataError("label vector length does not match record count")
        known = labels[~np.isnan(labels)]
        if known.size and not np.isin(known, (0.0, 1.0)).all():
            raise DataError("labels must be 0, 1 or unknown")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.schema)

    @property
    def prevalence(self) -> float:
        known = self.labels[~np.isnan(self.labels)]
        if known.size == 0:
            raise DataError("cohort has no labeled records")
        return float(known.mean())

    def record(self, i: int) -> PatientRecord:
        lab = self.labels[i]
        return PatientRecord(self.values[i].copy(), None if np.isnan(lab) else int(lab))

    def subset(self, indices) -> "Cohort":
        idx = np.asarray(indices, dtype=int)
        return Cohort(self.schema, self.values[idx], self.labels[idx])

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataError(f"unknown feature {name!r}") from None


def _check_schema(schema) -> tuple[FeatureSpec, ...]:
    schema = tuple(schema)
    names = [f.name for f in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate feature names in schema")
    return schema


def load_schema(path) -> tuple[tuple[FeatureSpec, ...], str]:
    """Read a YAML schema file; returns (features, label column name)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(f"unreadable schema file {path}: {exc}") from None
    if not isinstance(doc, dict) or "features" not in doc:
        raise SchemaError(f"schema file {path} must contain a 'features' list")
    feats = []
    for entry in doc["features"]:
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise SchemaError(f"schema entry {entry!r} needs 'name' and 'kind'")
        levels = tuple(str(v) for v in entry.get("levels", ()))
        feats.append(FeatureSpec(str(entry["name"]), str(entry["kind"]), levels))
    label = str(doc.get("label", DEFAULT_LABEL_COLUMN))
    return _check_schema(feats), label


def save_schema(schema, path, label_column: str = DEFAULT_LABEL_COLUMN) -> None:
    doc = {"label": label_column, "features": []}
    for f in schema:
        entry = {"name": f.name, "kind": f.kind}
        if f.levels:
            entry["levels"] = list(f.levels)
        doc["features"].append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_cohort(path, schema, label_column: str = DEFAULT_LABEL_COLUMN,
                require_label_column: bool = True) -> Cohort:
    """Parse a comma-separated cohort file against a schema.

    Empty cells are missing values; the label column may be absent when
    `require_label_column` is false (scoring-only files).
    """
    schema = _check_schema(schema)
    by_name = {f.name: f for f in schema}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in header:
            if col != label_column and col not in by_name:
                raise DataError(f"{path}: unknown column {col!r}")
        missing_cols = [n for n in by_name if n not in header]
        if missing_cols:
            raise DataError(f"{path}: columns missing from header: {missing_cols}")
        has_label = label_column in header
        if require_label_column and not has_label:
            raise DataError(f"{path}: label column {label_column!r} missing")
        col_of = {name: header.index(name) for name in by_name}
        label_col = header.index(label_column) if has_label else None

        rows, labels = [], []
        for lineno, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}")
            row = np.empty(len(schema))
            for j, feat in enumerate(schema):
                cell = cells[col_of[feat.name]]
                if not cell.strip():
                    row[j] = np.nan
                    continue
                try:
                    row[j] = feat.parse_cell(cell)
                except DataError as exc:
                    raise DataError(f"{path}:{lineno}: column {feat.name!r}: {exc}") from None
            if has_label:
                cell = cells[label_col].strip()
                if not cell:
                    labels.append(np.nan)
                elif cell in ("0", "1"):
                    labels.append(float(cell))
                else:
                    raise DataError(f"{path}:{lineno}: label must be 0, 1 or empty, got {cell!r}")
            else:
                labels.append(np.nan)
            rows.append(row)
    values = np.array(rows) if rows else np.empty((0, len(schema)))
    return Cohort(schema, values, np.array(labels))


def save_cohort(cohort: Cohort, path, label_column: str = DEFAULT_LABEL_COLUMN) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(cohort.feature_names) + [label_column])
        for i in range(cohort.n):
            row = [f.format_value(v) for f, v in zip(cohort.schema, cohort.values[i])]
            lab = cohort.labels[i]
            row.append("" if np.isnan(lab) else str(int(lab)))
            writer.writerow(row)


def one_hot_expand(cohort: Cohort) -> Cohort:
    """Replace each nominal feature with one binary indicator per level.

    A missing nominal value expands to missing indicators for every level.
    """
    if not any(f.kind == "nominal" for f in cohort.schema):
        return cohort
    new_schema: list[FeatureSpec] = []
    columns: list[np.ndarray] = []
    taken = set(cohort.feature_names)
    for j, feat in enumerate(cohort.schema):
        col = cohort.values[:, j]
        if feat.kind != "nominal":
            new_schema.append(feat)
            columns.append(col)
            continue
        for li, level in enumerate(feat.levels, start=1):
            name = f"{feat.name}={level}"
            if name in taken:
                raise SchemaError(f"one-hot name collision on {name!r}")
            taken.add(name)
            indicator = np.where(np.isnan(col), np.nan, (col == li).astype(float))
            new_schema.append(FeatureSpec(name, "binary"))
            columns.append(indicator)
    return Cohort(tuple(new_schema), np.column_stack(columns), cohort.labels)


def missing_rates(cohort: Cohort) -> dict[str, float]:
    rates = np.isnan(cohort.values).mean(axis=0)
    return {name: float(r) for name, r in zip(cohort.feature_names, rates)}


def missing_rate_screen(cohort: Cohort, max_missing: float = 0.15) -> tuple[str, ...]:
    """Names of features whose missing-cell fraction is at most the cutoff."""
    rates = missing_rates(cohort)
    return tuple(n for n in cohort.feature_names if rates[n] <= max_missing)


def drop_features(cohort: Cohort, keep) -> Cohort:
    keep = list(keep)
    idx = [cohort.feature_index(n) for n in keep]
    schema = tuple(cohort.schema[i] for i in idx)
    return Cohort(schema, cohort.values[:, idx], cohort.labels)


def univariate_pvalues(cohort: Cohort) -> dict[str, float]:
    """Two-sample p-value per feature against the outcome.

    Continuous and ordinal features use the rank-sum test; binary and
    nominal features use the chi-squared contingency test.  Records with a
    missing value or unknown label are dropped per feature; a constant
    feature is reported as p=1 with a warning.
    """
    labeled = ~np.isnan(cohort.labels)
    if not labeled.any():
        raise DataError("cohort has no labeled records")
    y = cohort.labels[labeled]
    if not ((y == 0).any() and (y == 1).any()):
        raise DataError("both outcome classes are required for screening")
    out: dict[str, float] = {}
    for j, feat in enumerate(cohort.schema):
        col = cohort.values[labeled, j]
        seen = ~np.isnan(col)
        x, yy = col[seen], y[seen]
        if x.size == 0 or np.unique(x).size < 2 or not ((yy == 0).any() and (yy == 1).any()):
            warnings.warn(f"feature {feat.name!r} is constant; p-value set to 1",
                          ConstantFeatureWarning, stacklevel=2)
            out[feat.name] = 1.0
            continue
        if feat.kind in ("continuous", "ordinal"):
            _, p = stats.ranksums(x[yy == 1], x[yy == 0])
        else:
            values = np.unique(x)
            table = np.array([[(x[yy == c] == v).sum() for v in values] for c in (0.0, 1.0)])
            _, p, _, _ = stats.chi2_contingency(table, correction=False)
        out[feat.name] = float(min(max(p, np.finfo(float).tiny), 1.0))
    return out
