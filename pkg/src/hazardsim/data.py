"""Slope-unit data model: table loading, standardization, covariate binning.

Inputs arrive as one row per slope unit with a binary presence/absence
label and pre-aggregated covariate columns. All containers are frozen and
their arrays are marked read-only, so they can be shared across parallel
workers without copies.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputFormatError, SchemaError, ValidationError

__all__ = [
    "ColumnSchema",
    "SlopeUnitTable",
    "Scaler",
    "StandardizedDesign",
    "BinDefinition",
    "load_table",
    "fit_scaler",
    "apply_scaler",
    "make_bins",
    "make_quantile_bins",
]

# |z| beyond this marks a value as extrapolating past the training range
EXTRAPOLATION_Z = 6.0


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ColumnSchema:
    """Maps column roles to column names in an input table."""

    label_col: str
    id_col: str
    covariate_cols: tuple[str, ...]

    def __post_init__(self):
        if not self.covariate_cols:
            raise SchemaError("schema needs at least one covariate column")
        roles = (self.label_col, self.id_col, *self.covariate_cols)
        if len(set(roles)) != len(roles):
            raise SchemaError("schema assigns one column to several roles")


@dataclass(frozen=True)
class SlopeUnitTable:
    """Per-slope-unit observations: id, binary label, covariate matrix."""

    unit_ids: tuple[str, ...]
    labels: np.ndarray
    covariate_names: tuple[str, ...]
    covariates: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        cov = np.asarray(self.covariates, dtype=np.float64)
        n = len(self.unit_ids)
        if labels.shape != (n,) or cov.shape != (n, len(self.covariate_names)):
            raise ValidationError("table arrays are not aligned with ids/names")
        if n == 0:
            raise ValidationError("table is empty")
        if len(set(self.unit_ids)) != n:
            seen, dup = set(), None
            for u in self.unit_ids:
                if u in seen:
                    dup = u
                    break
                seen.add(u)
            raise ValidationError(f"duplicate unit_id {dup!r}")
        bad = (labels != 0) & (labels != 1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(
                f"label must be 0 or 1; row {i + 1} has {labels[i]}"
            )
        if labels.min() == labels.max():
            raise ValidationError("labels contain a single class")
        if not np.isfinite(cov).all():
            i, j = np.argwhere(~np.isfinite(cov))[0]
            raise ValidationError(
                f"missing value in row {i + 1}, column {self.covariate_names[j]!r}"
            )
        object.__setattr__(self, "labels", _freeze(labels))
        object.__setattr__(self, "covariates", _freeze(cov))

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise SchemaError(f"no covariate column {name!r}") from None
        return self.covariates[:, j]

    def subset(self, rows: np.ndarray) -> "SlopeUnitTable":
        """Row subset preserving order; used by cross-validation splits."""
        rows = np.asarray(rows)
        return SlopeUnitTable(
            unit_ids=tuple(self.unit_ids[i] for i in rows),
            labels=self.labels[rows],
            covariate_names=self.covariate_names,
            covariates=self.covariates[rows],
        )


def _rows_to_table(rows: list[dict], schema: ColumnSchema, origin: str) -> SlopeUnitTable:
    if not rows:
        raise ValidationError(f"{origin}: no data rows")
    missing = [
        c
        for c in (schema.label_col, schema.id_col, *schema.covariate_cols)
        if c not in rows[0]
    ]
    if missing:
        raise SchemaError(f"{origin}: missing column(s) {', '.join(missing)}")

    ids, labels = [], []
    cov = np.empty((len(rows), len(schema.covariate_cols)))
    for i, row in enumerate(rows):
        ids.append(str(row[schema.id_col]))
        raw_label = row[schema.label_col]
        try:
            lab = int(str(raw_label).strip())
        except (TypeError, ValueError):
            raise ValidationError(
                f"{origin}: row {i + 1}: label {raw_label!r} is not an integer"
            ) from None
        if lab not in (0, 1):
            raise ValidationError(f"{origin}: row {i + 1}: label must be 0 or 1, got {lab}")
        labels.append(lab)
        for j, c in enumerate(schema.covariate_cols):
            raw = row.get(c)
            if raw is None or (isinstance(raw, str) and not raw.strip()):
                raise ValidationError(f"{origin}: missing value in row {i + 1}, column {c!r}")
            try:
                v = float(raw)
            except (TypeError, ValueError):
                raise ValidationError(
                    f"{origin}: row {i + 1}, column {c!r}: {raw!r} is not numeric"
                ) from None
            if not np.isfinite(v):
                raise ValidationError(f"{origin}: missing value in row {i + 1}, column {c!r}")
            cov[i, j] = v

    try:
        return SlopeUnitTable(
            unit_ids=tuple(ids),
            labels=np.array(labels),
            covariate_names=schema.covariate_cols,
            covariates=cov,
        )
    except ValidationError as e:
        raise ValidationError(f"{origin}: {e}") from None


def load_table(path, schema: ColumnSchema, delimiter: str = ",") -> SlopeUnitTable:
    """Load a slope-unit table from CSV or GeoJSON, row order preserved."""
    path = str(path)
    if path.endswith((".geojson", ".json")):
        return load_geojson_table(path, schema)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh, delimiter=delimiter)
            if reader.fieldnames is None:
                raise ValidationError(f"{path}: empty file")
            rows = list(reader)
    except OSError as e:
        raise InputFormatError(f"cannot read {path}: {e}") from None
    return _rows_to_table(rows, schema, origin=path)


def load_geojson_table(path, schema: ColumnSchema) -> SlopeUnitTable:
    """Load a table from a GeoJSON FeatureCollection's properties."""
    path = str(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as e:
        raise InputFormatError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise InputFormatError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(obj, dict) or obj.get("type") != "FeatureCollection":
        raise InputFormatError(f"{path}: root is not a FeatureCollection")
    rows = [f.get("properties") or {} for f in obj.get("features", [])]
    return _rows_to_table(rows, schema, origin=path)


@dataclass(frozen=True)
class Scaler:
    """Per-column training mean and sample (n-1) standard deviation."""

    columns: tuple[str, ...]
    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        sds = np.asarray(self.sds, dtype=np.float64)
        if means.shape != (len(self.columns),) or sds.shape != means.shape:
            raise ValidationError("scaler arrays do not match its column list")
        if not (sds > 0).all():
            bad = self.columns[int(np.flatnonzero(sds <= 0)[0])]
            raise ValidationError(f"column {bad!r} has non-positive standard deviation")
        object.__setattr__(self, "means", _freeze(means))
        object.__setattr__(self, "sds", _freeze(sds))

    def _index(self, name: str) -> int:
        try:
            return self.columns.index(name)
        except ValueError:
            raise SchemaError(f"scaler has no column {name!r}") from None

    def transform_column(self, name: str, values: np.ndarray) -> np.ndarray:
        j = self._index(name)
        return (np.asarray(values, dtype=np.float64) - self.means[j]) / self.sds[j]

    def inverse_column(self, name: str, z: np.ndarray) -> np.ndarray:
        j = self._index(name)
        return np.asarray(z, dtype=np.float64) * self.sds[j] + self.means[j]


@dataclass(frozen=True)
class StandardizedDesign:
    """Standardized covariate matrix plus the scaler that produced it."""

    matrix: np.ndarray
    column_names: tuple[str, ...]
    scaler: Scaler
    extrapolated: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "matrix", _freeze(np.asarray(self.matrix, dtype=np.float64)))
        object.__setattr__(self, "extrapolated", _freeze(np.asarray(self.extrapolated, dtype=bool)))

    @property
    def n_extrapolated(self) -> int:
        return int(self.extrapolated.sum())

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.column_names.index(name)
        except ValueError:
            raise SchemaError(f"no standardized column {name!r}") from None
        return self.matrix[:, j]


def fit_scaler(table: SlopeUnitTable, columns) -> Scaler:
    """Sample mean/sd per column; rejects constant columns."""
    columns = tuple(columns)
    means, sds = [], []
    for c in columns:
        v = table.column(c)
        sd = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        if sd <= 0.0:
            raise ValidationError(f"column {c!r} is constant; cannot standardize")
        means.append(float(v.mean()))
        sds.append(sd)
    return Scaler(columns=columns, means=np.array(means), sds=np.array(sds))


def apply_scaler(scaler: Scaler, table: SlopeUnitTable) -> StandardizedDesign:
    """Standardize with the stored training scaler; never refits.

    Values landing more than EXTRAPOLATION_Z training standard deviations
    from the training mean are flagged, not altered.
    """
    n = table.n_units
    m = len(scaler.columns)
    z = np.empty((n, m))
    for j, c in enumerate(scaler.columns):
        z[:, j] = (table.column(c) - scaler.means[j]) / scaler.sds[j]
    return StandardizedDesign(
        matrix=z,
        column_names=scaler.columns,
        scaler=scaler,
        extrapolated=np.abs(z) > EXTRAPOLATION_Z,
    )


@dataclass(frozen=True)
class BinDefinition:
    """Discretization of one covariate into ordered classes 1..K."""

    column: str
    n_classes: int
    breaks: np.ndarray

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=np.float64)
        if breaks.shape != (self.n_classes + 1,):
            raise ValidationError("breaks must have K+1 entries")
        if not (np.diff(breaks) > 0).all():
            raise ValidationError("breaks must be strictly increasing")
        object.__setattr__(self, "breaks", _freeze(breaks))

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.breaks[:-1] + self.breaks[1:])

    def assign(self, values) -> np.ndarray:
        """1-based class index per value; errors on out-of-range input."""
        classes, n_clamped = self.assign_clamped(values)
        if n_clamped:
            v = np.asarray(values, dtype=np.float64)
            out = v[(v < self.breaks[0]) | (v > self.breaks[-1])][0]
            raise ValidationError(
                f"value {out!r} outside binning range of column {self.column!r}"
            )
        return classes

    def assign_clamped(self, values) -> tuple[np.ndarray, int]:
        """Like assign, but clamps out-of-range values to the edge classes.

        Returns (classes, number of clamped values).
        """
        v = np.asarray(values, dtype=np.float64)
        idx = np.searchsorted(self.breaks, v, side="right")
        out_of_range = int(((v < self.breaks[0]) | (v > self.breaks[-1])).sum())
        classes = np.clip(idx, 1, self.n_classes).astype(np.int64)
        return classes, out_of_range


def make_bins(values, n_classes: int, column: str = "") -> BinDefinition:
    """Equal-width classes over [min, max]; the max maps to the top class."""
    if n_classes < 3:
        raise ValidationError(f"need at least 3 classes, got {n_classes}")
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise ValidationError(f"column {column!r} is constant; cannot bin")
    return BinDefinition(column=column, n_classes=n_classes, breaks=np.linspace(lo, hi, n_classes + 1))


def make_quantile_bins(values, n_classes: int, column: str = "") -> BinDefinition:
    """Quantile-spaced classes; fails when ties collapse break points."""
    if n_classes < 3:
        raise ValidationError(f"need at least 3 classes, got {n_classes}")
    v = np.asarray(values, dtype=np.float64)
    breaks = np.quantile(v, np.linspace(0.0, 1.0, n_classes + 1))
    if not (np.diff(breaks) > 0).all():
        raise ValidationError(
            f"column {column!r}: quantile breaks are not distinct; lower the class count"
        )
    return BinDefinition(column=column, n_classes=n_classes, breaks=breaks)
