"""Posterior predictive probabilities and counts at new sites and on rasters.

Each retained posterior draw conditions the spatial field on that draw's
latent residuals (latent logits minus the regression part) and simulates the
field at the targets; an independent nugget term is added there as well, so
count intervals carry the full model uncertainty.  Draws are independent
given the derived seed schedule, one child seed per draw.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .covariance import CovarianceModel, conditional_field_draw
from .data import DesignConstants, SpatialDataset, design_from_covariates
from .errors import DataValidationError, ParseError, SingularMatrixError
from .mcmc import ChainOutput

log = logging.getLogger(__name__)

PROB_EPS = 1e-12
NODATA_DEFAULT = -9999.0


@dataclass(frozen=True)
class GridSpec:
    """Regular prediction grid: nx columns by ny rows over a bounding box (km)."""

    nx: int
    ny: int
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise DataValidationError("grid must have at least one cell")
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise DataValidationError("grid bounding box is empty")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_dx(self) -> float:
        return (self.xmax - self.xmin) / self.nx

    @property
    def cell_dy(self) -> float:
        return (self.ymax - self.ymin) / self.ny

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) centers, row-major starting at the north-west cell."""
        xs = self.xmin + (np.arange(self.nx) + 0.5) * self.cell_dx
        ys = self.ymax - (np.arange(self.ny) + 0.5) * self.cell_dy
        xx, yy = np.meshgrid(xs, ys)
        return np.column_stack([xx.ravel(), yy.ravel()])


@dataclass
class PredictionDraws:
    """Per-draw predicted probabilities, optionally with count draws."""

    probs: np.ndarray  # (draws, sites) in (0, 1)
    site_ids: tuple[str, ...] | None = None
    grid: GridSpec | None = None
    counts: np.ndarray | None = None
    skipped_draws: int = 0

    @property
    def n_draws(self) -> int:
        return self.probs.shape[0]

    @property
    def n_sites(self) -> int:
        return self.probs.shape[1]


def _spawn_rngs(seed, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def _predict_points(chain: ChainOutput, train_coords, X_train, target_coords,
                    X_targets, seed) -> tuple[np.ndarray, int]:
    X_train = np.asarray(getattr(X_train, "values", X_train), dtype=float)
    X_targets = np.asarray(getattr(X_targets, "values", X_targets), dtype=float)
    n_targets = np.asarray(target_coords).reshape(-1, 2).shape[0]
    m = chain.n_draws
    probs = np.empty((m, n_targets))
    keep = np.ones(m, dtype=bool)
    rngs = _spawn_rngs(seed, m)
    for i in range(m):
        rng = rngs[i]
        model = CovarianceModel(
            chain.sigma[i] ** 2, chain.tau[i] ** 2, chain.phi[i], chain.kappa
        )
        residual = chain.t[i] - X_train @ chain.beta[i]
        try:
            _, field_draw = conditional_field_draw(
                train_coords, residual, target_coords, model, rng
            )
        except SingularMatrixError as exc:
            log.warning("skipping draw %d: %s", i, exc)
            keep[i] = False
            continue
        nugget = chain.tau[i] * rng.standard_normal(n_targets)
        eta = X_targets @ chain.beta[i] + field_draw + nugget
        probs[i] = np.clip(expit(eta), PROB_EPS, 1.0 - PROB_EPS)
    skipped = int(m - keep.sum())
    return probs[keep], skipped


def predict_sites(chain: ChainOutput, train: SpatialDataset, X_train,
                  targets: SpatialDataset, X_targets, seed) -> PredictionDraws:
    """Per-draw predicted probabilities at the target sites."""
    if chain.n_draws < 1:
        raise DataValidationError("chain has no draws")
    overlap = set(train.ids) & set(targets.ids)
    if overlap:
        raise DataValidationError(f"targets overlap training sites: {sorted(overlap)}")
    probs, skipped = _predict_points(
        chain, train.coords, X_train, targets.coords, X_targets, seed
    )
    return PredictionDraws(probs=probs, site_ids=targets.ids, skipped_draws=skipped)


def strided_indices(total: int, wanted: int) -> np.ndarray:
    """Evenly strided subsample of draw indices (never random)."""
    if wanted >= total:
        return np.arange(total)
    stride = total / wanted
    return np.floor(np.arange(wanted) * stride).astype(int)


def subsample_chain(chain: ChainOutput, wanted: int) -> ChainOutput:
    idx = strided_indices(chain.n_draws, wanted)
    return ChainOutput(
        beta=chain.beta[idx], sigma=chain.sigma[idx], tau=chain.tau[idx],
        phi=chain.phi[idx], t=chain.t[idx], accept_rates=chain.accept_rates,
        step_trace=chain.step_trace, kappa=chain.kappa, config=chain.config,
    )


def predict_grid(chain: ChainOutput, train: SpatialDataset, X_train,
                 covariate_fields: dict, grid: GridSpec,
                 draw_subsample: int = 1000, seed=0,
                 design_constants: DesignConstants | None = None) -> tuple[PredictionDraws, np.ndarray]:
    """Predictions over a raster grid plus the cellwise posterior-mean raster.

    `covariate_fields` maps "elevation" and "vegetation" to (ny, nx) arrays
    aligned with the grid.  Chain draws are subsampled by even striding to
    bound the cost of the dense joint conditional simulation.
    """
    for name in ("elevation", "vegetation"):
        if name not in covariate_fields:
            raise DataValidationError(f"missing covariate field {name!r}")
        arr = np.asarray(covariate_fields[name], dtype=float)
        if arr.shape != (grid.ny, grid.nx):
            raise DataValidationError(
                f"{name} raster shape {arr.shape} does not match grid "
                f"({grid.ny}, {grid.nx})"
            )
        if not np.all(np.isfinite(arr)):
            raise DataValidationError(f"{name} raster does not cover the grid (NODATA present)")
    elev = np.asarray(covariate_fields["elevation"], dtype=float).ravel()
    veg = np.asarray(covariate_fields["vegetation"], dtype=float).ravel()
    X_cells = design_from_covariates(elev, veg, design_constants)
    sub = subsample_chain(chain, draw_subsample)
    probs, skipped = _predict_points(
        sub, train.coords, X_train, grid.cell_centers(), X_cells, seed
    )
    preds = PredictionDraws(probs=probs, grid=grid, skipped_draws=skipped)
    mean_raster = probs.mean(axis=0).reshape(grid.ny, grid.nx)
    return preds, mean_raster


def draw_counts(preds: PredictionDraws, n_targets, seed) -> np.ndarray:
    """Binomial(n_j, p[m, j]) count draws matching the probability draws."""
    n_targets = np.asarray(n_targets, dtype=int)
    if n_targets.shape[0] != preds.n_sites:
        raise DataValidationError("n_targets length must match prediction sites")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.binomial(n_targets[None, :], preds.probs)


# -- ASCII grid rasters -------------------------------------------------------

def write_ascii_grid(path, values, xllcorner: float, yllcorner: float,
                     cellsize: float, nodata: float = NODATA_DEFAULT) -> int:
    """Plain ASCII grid, row-major from the northern row; NaN becomes NODATA."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise DataValidationError("raster values must be a 2-D array")
    nrows, ncols = arr.shape
    lines = [
        f"ncols {ncols}",
        f"nrows {nrows}",
        f"xllcorner {repr(float(xllcorner))}",
        f"yllcorner {repr(float(yllcorner))}",
        f"cellsize {repr(float(cellsize))}",
        f"NODATA_value {repr(float(nodata))}",
    ]
    for row in arr:
        out = np.where(np.isnan(row), nodata, row)
        lines.append(" ".join(repr(float(v)) for v in out))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return nrows


def read_ascii_grid(path) -> tuple[np.ndarray, dict]:
    """Returns (values with NODATA as NaN, header dict)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = {}
    idx = 0
    expected = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")
    for name in expected:
        if idx >= len(lines):
            raise ParseError(f"missing raster header line {name!r}", line=idx + 1)
        key, _, value = lines[idx].partition(" ")
        if key.strip().lower() != name.lower():
            raise ParseError(f"expected header {name!r}, got {key!r}", line=idx + 1)
        header[name] = float(value)
        idx += 1
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    rows = []
    for lineno, line in enumerate(lines[idx:], start=idx + 1):
        if not line.strip():
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != ncols:
            raise ParseError(f"expected {ncols} values, got {len(vals)}", line=lineno)
        rows.append(vals)
    if len(rows) != nrows:
        raise ParseError(f"expected {nrows} rows, got {len(rows)}")
    arr = np.array(rows, dtype=float)
    arr[arr == header["NODATA_value"]] = np.nan
    return arr, header


def grid_from_header(header: dict) -> GridSpec:
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    cell = header["cellsize"]
    return GridSpec(
        nx=ncols, ny=nrows,
        xmin=header["xllcorner"], xmax=header["xllcorner"] + ncols * cell,
        ymin=header["yllcorner"], ymax=header["yllcorner"] + nrows * cell,
    )
