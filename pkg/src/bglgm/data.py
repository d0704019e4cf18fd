"""Plot datasets: ingestion, design matrices and train/validation splitting.

Coordinates are projected planar eastings/northings in kilometres.  Dataset
files are comma-delimited UTF-8 text with the fixed header
``id,x,y,n_total,y_hardwood,elevation,vegetation`` and an optional leading
``# units=m|km`` line (metres are converted to km on load).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataValidationError, ParseError

log = logging.getLogger(__name__)

DATASET_HEADER = ("id", "x", "y", "n_total", "y_hardwood", "elevation", "vegetation")

# Offset used to break exactly tied coordinates so covariance matrices stay
# nonsingular; keyed on record index, so ingestion is deterministic.
COORD_JITTER_KM = 1e-6


@dataclass(frozen=True)
class PlotRecord:
    """One surveyed plot: location (km), live-tree totals and covariates."""

    id: str
    x: float
    y: float
    n_total: int
    y_hardwood: int
    elevation: float
    vegetation: float

    def __post_init__(self):
        if self.n_total < 0 or self.y_hardwood < 0:
            raise DataValidationError(f"plot {self.id}: negative tree counts")
        if self.y_hardwood > self.n_total:
            raise DataValidationError(
                f"plot {self.id}: y_hardwood={self.y_hardwood} exceeds "
                f"n_total={self.n_total}"
            )
        for name in ("x", "y", "elevation", "vegetation"):
            if not math.isfinite(getattr(self, name)):
                raise DataValidationError(f"plot {self.id}: non-finite {name}")


@dataclass(frozen=True)
class SpatialDataset:
    """Ordered collection of plots with unique ids and unique coordinates.

    Tied coordinates are perturbed deterministically at construction (ingest);
    the jitter is logged.  Instances are immutable and safe to share across
    threads.  An empty dataset is representable (it arises as one side of a
    degenerate split) but `load_dataset` rejects files with no rows.
    """

    records: tuple[PlotRecord, ...]
    crs_note: str = "projected planar coordinates, km"

    def __post_init__(self):
        records = tuple(self.records)
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataValidationError(f"duplicate plot ids: {dupes}")
        seen: set[tuple[float, float]] = set()
        fixed = []
        for idx, rec in enumerate(records):
            x, y = rec.x, rec.y
            bump = 1
            while (x, y) in seen:
                x = rec.x + idx * bump * COORD_JITTER_KM
                y = rec.y + idx * bump * COORD_JITTER_KM
                bump += 1
            if (x, y) != (rec.x, rec.y):
                log.warning(
                    "plot %s: duplicate coordinates jittered by %g km",
                    rec.id, idx * (bump - 1) * COORD_JITTER_KM,
                )
                rec = replace(rec, x=x, y=y)
            seen.add((x, y))
            fixed.append(rec)
        object.__setattr__(self, "records", tuple(fixed))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    @property
    def coords(self) -> np.ndarray:
        return np.array([(r.x, r.y) for r in self.records], dtype=float).reshape(-1, 2)

    @property
    def n_total(self) -> np.ndarray:
        return np.array([r.n_total for r in self.records], dtype=int)

    @property
    def y_hardwood(self) -> np.ndarray:
        return np.array([r.y_hardwood for r in self.records], dtype=int)

    @property
    def elevation(self) -> np.ndarray:
        return np.array([r.elevation for r in self.records], dtype=float)

    @property
    def vegetation(self) -> np.ndarray:
        return np.array([r.vegetation for r in self.records], dtype=float)

    def subset(self, ids) -> "SpatialDataset":
        """Records with the given ids, preserving dataset order."""
        wanted = set(ids)
        unknown = wanted - set(self.ids)
        if unknown:
            raise DataValidationError(f"unknown plot ids: {sorted(unknown)}")
        return SpatialDataset(
            tuple(r for r in self.records if r.id in wanted), self.crs_note
        )


def load_dataset(path) -> SpatialDataset:
    """Parse a dataset file; see the module docstring for the format."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    units = "km"
    start = 0
    if lines and lines[0].lstrip().startswith("#"):
        flag = lines[0].lstrip()[1:].strip()
        if flag.startswith("units="):
            units = flag.split("=", 1)[1].strip()
            if units not in ("m", "km"):
                raise ParseError(f"units must be 'm' or 'km', got {units!r}", line=1)
        else:
            raise ParseError(f"unrecognized directive {flag!r}", line=1)
        start = 1
    if start >= len(lines):
        raise ParseError("file has no header line")
    header = tuple(h.strip() for h in lines[start].split(","))
    if header != DATASET_HEADER:
        raise ParseError(
            f"header must be {','.join(DATASET_HEADER)!r}, got {lines[start]!r}",
            line=start + 1,
        )
    scale = 1e-3 if units == "m" else 1.0
    records = []
    for lineno, raw in enumerate(lines[start + 1:], start=start + 2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != len(DATASET_HEADER):
            raise ParseError(
                f"expected {len(DATASET_HEADER)} fields, got {len(parts)}", line=lineno
            )
        try:
            rec = PlotRecord(
                id=parts[0].strip(),
                x=float(parts[1]) * scale,
                y=float(parts[2]) * scale,
                n_total=int(parts[3]),
                y_hardwood=int(parts[4]),
                elevation=float(parts[5]),
                vegetation=float(parts[6]),
            )
        except ValueError as exc:
            if isinstance(exc, DataValidationError):
                raise
            raise ParseError(str(exc), line=lineno) from exc
        records.append(rec)
    if not records:
        raise ParseError("file contains no data rows")
    return SpatialDataset(tuple(records))


def _fmt(value: float) -> str:
    return repr(float(value))


def write_dataset(data: SpatialDataset, path) -> int:
    """Write a dataset in the canonical km format; returns the row count."""
    lines = ["# units=km", ",".join(DATASET_HEADER)]
    for r in data.records:
        lines.append(
            f"{r.id},{_fmt(r.x)},{_fmt(r.y)},{r.n_total},{r.y_hardwood},"
            f"{_fmt(r.elevation)},{_fmt(r.vegetation)}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(data)


@dataclass(frozen=True)
class DesignConstants:
    """Centering/scaling constants for the covariate design.

    Defaults follow the fitted dataset's conventions (elevation centred at
    320 m and scaled by 50, vegetation change point 0.3 scaled by 0.05); all
    four are overridable through the run configuration.
    """

    elev_center: float = 320.0
    elev_scale: float = 50.0
    veg_change_point: float = 0.3
    veg_scale: float = 0.05


@dataclass(frozen=True)
class DesignMatrix:
    """Covariate matrix with columns (intercept, elevation, veg-below, veg-above)."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise DataValidationError("design matrix must be 2-D")
        if not np.all(np.isfinite(vals)):
            raise DataValidationError("design matrix contains non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


def design_from_covariates(elevation, vegetation, constants: DesignConstants | None = None) -> np.ndarray:
    """Raw design rows (1, scaled elevation, veg below/above change point)."""
    c = constants or DesignConstants()
    e = (np.asarray(elevation, dtype=float) - c.elev_center) / c.elev_scale
    v = (np.asarray(vegetation, dtype=float) - c.veg_change_point) / c.veg_scale
    below = np.minimum(v, 0.0)
    above = np.maximum(v, 0.0)
    return np.column_stack([np.ones_like(e), e, below, above])


def build_design_matrix(data: SpatialDataset, constants: DesignConstants | None = None) -> DesignMatrix:
    return DesignMatrix(design_from_covariates(data.elevation, data.vegetation, constants))


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/validation id sets."""

    train_ids: tuple[str, ...]
    validation_ids: tuple[str, ...]

    def __post_init__(self):
        train = tuple(self.train_ids)
        valid = tuple(self.validation_ids)
        overlap = set(train) & set(valid)
        if overlap:
            raise DataValidationError(
                f"train and validation sets overlap: {sorted(overlap)}"
            )
        if len(set(train)) != len(train) or len(set(valid)) != len(valid):
            raise DataValidationError("split contains repeated ids")
        object.__setattr__(self, "train_ids", train)
        object.__setattr__(self, "validation_ids", valid)


def split_train_validation(data: SpatialDataset, spec: SplitSpec) -> tuple[SpatialDataset, SpatialDataset]:
    """Partition the dataset per the split spec, preserving record order."""
    known = set(data.ids)
    unknown = (set(spec.train_ids) | set(spec.validation_ids)) - known
    if unknown:
        raise DataValidationError(f"split references unknown ids: {sorted(unknown)}")
    train_set = set(spec.train_ids)
    valid_set = set(spec.validation_ids)
    train = tuple(r for r in data.records if r.id in train_set)
    valid = tuple(r for r in data.records if r.id in valid_set)
    return (
        SpatialDataset(train, data.crs_note),
        SpatialDataset(valid, data.crs_note),
    )


def write_split(spec: SplitSpec, path) -> int:
    lines = [
        "train=" + ",".join(spec.train_ids),
        "validation=" + ",".join(spec.validation_ids),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 2


def load_split(path) -> SplitSpec:
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
    if len(lines) != 2:
        raise ParseError("split file must have exactly two lines (train=, validation=)")
    parts = {}
    for lineno, line in enumerate(lines, start=1):
        if "=" not in line:
            raise ParseError("expected key=value", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in ("train", "validation"):
            raise ParseError(f"unexpected key {key!r}", line=lineno)
        parts[key] = tuple(v.strip() for v in value.split(",") if v.strip())
    if set(parts) != {"train", "validation"}:
        raise ParseError("split file must define both train= and validation=")
    return SplitSpec(parts["train"], parts["validation"])
