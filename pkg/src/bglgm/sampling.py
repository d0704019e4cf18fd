"""Training-subset selection and the model-faithful synthetic data generator.

Stratification clusters sites on standardized (x, y, elevation) so location
and elevation count equally; subset selection within a stratum sorts by
vegetation index and samples systematically.  The generator draws covariate
surfaces and the latent spatial field from the same Matern machinery the
model assumes, then simulates binomial counts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .covariance import CovarianceModel, build_covariance_matrix, unconditional_field_draw
from .data import (
    DesignConstants,
    PlotRecord,
    SpatialDataset,
    design_from_covariates,
)
from .errors import DataValidationError
from .predict import GridSpec

log = logging.getLogger(__name__)

_KMEANS_RESTARTS = 10
_KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class Strata:
    """Site-to-stratum assignment plus centroids in standardized units."""

    assignment: dict
    centroids: tuple

    @property
    def k(self) -> int:
        return len(self.centroids)

    def members(self, stratum: int) -> list:
        return [sid for sid, s in self.assignment.items() if s == stratum]


def _standardize(features: np.ndarray) -> np.ndarray:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0.0] = 1.0
    return (features - mean) / std


def _kmeans(features: np.ndarray, k: int, rng: np.random.Generator):
    n = features.shape[0]
    best_labels = None
    best_centers = None
    best_ss = math.inf
    for _ in range(_KMEANS_RESTARTS):
        centers = features[rng.choice(n, size=k, replace=False)].copy()
        labels = np.zeros(n, dtype=int)
        for _ in range(_KMEANS_MAX_ITER):
            d2 = ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
            labels = d2.argmin(axis=1)
            # reseed empty clusters with the farthest point
            for c in range(k):
                if not np.any(labels == c):
                    far = int(d2.min(axis=1).argmax())
                    labels[far] = c
            new_centers = np.vstack([
                features[labels == c].mean(axis=0) for c in range(k)
            ])
            if np.allclose(new_centers, centers):
                centers = new_centers
                break
            centers = new_centers
        ss = float(((features - centers[labels]) ** 2).sum())
        if ss < best_ss:
            best_ss = ss
            best_labels = labels
            best_centers = centers
    return best_labels, best_centers, best_ss


def make_strata(data: SpatialDataset, k: int = 3, seed=0) -> Strata:
    """k-means strata on standardized (x, y, elevation), best of 10 restarts."""
    if len(data) < k:
        raise DataValidationError(f"need at least {k} sites to form {k} strata")
    features = np.column_stack([data.coords, data.elevation])
    if np.allclose(features, features[0]):
        raise DataValidationError("all sites identical; cannot stratify")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    labels, centers, _ = _kmeans(_standardize(features), k, rng)
    assignment = {sid: int(lab) for sid, lab in zip(data.ids, labels)}
    return Strata(assignment=assignment, centroids=tuple(map(tuple, centers)))


def _largest_remainder_quotas(sizes: np.ndarray, m: int) -> np.ndarray:
    total = sizes.sum()
    exact = m * sizes / total
    quotas = np.floor(exact).astype(int)
    remainders = exact - quotas
    shortfall = m - quotas.sum()
    if shortfall > 0:
        # prefer largest remainder; break ties toward larger strata, then index
        order = sorted(
            range(len(sizes)),
            key=lambda i: (-remainders[i], -sizes[i], i),
        )
        for i in order[:shortfall]:
            quotas[i] += 1
    return quotas


def stratified_subsample(data: SpatialDataset, strata: Strata, m: int) -> list:
    """Proportional quotas per stratum; within each, sort by vegetation and
    take every stride-th element starting at the first.  Deterministic."""
    if m > len(data):
        raise DataValidationError("cannot sample more sites than available")
    order = {sid: i for i, sid in enumerate(data.ids)}
    veg = {r.id: r.vegetation for r in data.records}
    sizes = np.array([len(strata.members(s)) for s in range(strata.k)], dtype=int)
    if np.any(sizes == 0):
        raise DataValidationError("every stratum must be nonempty")
    quotas = _largest_remainder_quotas(sizes, m)
    if m < strata.k:
        log.warning(
            "requested %d sites from %d strata; smallest strata receive no quota",
            m, strata.k,
        )
    selected = []
    for s in range(strata.k):
        quota = int(quotas[s])
        if quota == 0:
            continue
        members = sorted(strata.members(s), key=lambda sid: (veg[sid], sid))
        stride = len(members) / quota
        # non-integer strides walk by accumulated real stride, floor indices
        idx = np.floor(np.arange(quota) * stride).astype(int)
        selected.extend(members[i] for i in idx)
    return sorted(selected, key=lambda sid: order[sid])


def random_subsample(data: SpatialDataset, m: int, seed) -> list:
    """Uniform sample without replacement, returned in dataset order."""
    if m > len(data):
        raise DataValidationError("cannot sample more sites than available")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = rng.choice(len(data), size=m, replace=False)
    ids = data.ids
    picked = {ids[i] for i in chosen}
    return [sid for sid in ids if sid in picked]


@dataclass(frozen=True)
class SyntheticConfig:
    """Ground truth and layout for one synthetic dataset."""

    n_sites: int = 60
    box_km: float = 10.0
    beta: tuple = (-1.0, 0.6, 0.5, 0.4)
    sigma2: float = 0.25
    tau2: float = 1.0
    phi: float = 2.5
    kappa: float = 1.5
    n_total_min: int = 15
    n_total_max: int = 40
    elev_mean: float = 320.0
    elev_sd: float = 50.0
    elev_range_km: float = 3.0
    veg_center: float = -0.4
    veg_scale: float = 1.1
    veg_range_km: float = 2.0
    raster_nx: int = 0
    raster_ny: int = 0
    seed: int = 0
    design: DesignConstants = field(default_factory=DesignConstants)

    def __post_init__(self):
        if self.n_sites < 1 or self.box_km <= 0:
            raise DataValidationError("need a positive site count and box size")
        if self.sigma2 < 0 or self.tau2 < 0 or self.phi <= 0 or self.kappa <= 0:
            raise DataValidationError("invalid covariance truth")
        if not 1 <= self.n_total_min <= self.n_total_max:
            raise DataValidationError("need 1 <= n_total_min <= n_total_max")
        if (self.raster_nx > 0) != (self.raster_ny > 0):
            raise DataValidationError("raster_nx and raster_ny must be set together")


@dataclass
class SyntheticTruth:
    """Generating parameters and latent values, for calibration studies."""

    beta: np.ndarray
    sigma2: float
    tau2: float
    phi: float
    kappa: float
    site_ids: tuple
    u: np.ndarray
    z: np.ndarray
    t: np.ndarray
    p: np.ndarray


# nugget used purely to keep covariate-surface factorizations stable
_FIELD_JITTER = 1e-8


def _smooth_field(points: np.ndarray, range_km: float, kappa: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Unit-variance Matern field sampled jointly at the given points."""
    model = CovarianceModel(1.0, _FIELD_JITTER, range_km, kappa)
    lower = build_covariance_matrix(points, model, include_nugget=True).factor()
    return lower @ rng.standard_normal(points.shape[0])


def generate_synthetic_dataset(config: SyntheticConfig):
    """Synthetic plots drawn from the spatial binomial model.

    Returns (dataset, rasters, truth).  `rasters` maps covariate names to
    (ny, nx) arrays on the configured grid (empty dict when no raster is
    requested); covariate surfaces are drawn jointly at sites and cell
    centers so rasters and site covariates describe one surface.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_sites
    sites = rng.uniform(0.0, config.box_km, size=(n, 2))
    grid = None
    cells = np.empty((0, 2))
    if config.raster_nx > 0:
        grid = GridSpec(
            nx=config.raster_nx, ny=config.raster_ny,
            xmin=0.0, xmax=config.box_km, ymin=0.0, ymax=config.box_km,
        )
        cells = grid.cell_centers()
    all_points = np.vstack([sites, cells])

    g_elev = _smooth_field(all_points, config.elev_range_km, config.kappa, rng)
    g_veg = _smooth_field(all_points, config.veg_range_km, config.kappa, rng)
    elevation = config.elev_mean + config.elev_sd * g_elev
    vegetation = expit(config.veg_center + config.veg_scale * g_veg)

    if config.n_total_min == config.n_total_max:
        n_total = np.full(n, config.n_total_min, dtype=int)
    else:
        n_total = rng.integers(config.n_total_min, config.n_total_max + 1, size=n)

    beta = np.asarray(config.beta, dtype=float)
    X = design_from_covariates(elevation[:n], vegetation[:n], config.design)
    field_model = CovarianceModel(config.sigma2, 0.0, config.phi, config.kappa)
    u = unconditional_field_draw(sites, field_model, rng)
    z = math.sqrt(config.tau2) * rng.standard_normal(n)
    t = X @ beta + u + z
    p = expit(t)
    y = rng.binomial(n_total, p)

    width = max(3, len(str(n)))
    records = tuple(
        PlotRecord(
            id=f"s{i + 1:0{width}d}",
            x=float(sites[i, 0]), y=float(sites[i, 1]),
            n_total=int(n_total[i]), y_hardwood=int(y[i]),
            elevation=float(elevation[i]), vegetation=float(vegetation[i]),
        )
        for i in range(n)
    )
    dataset = SpatialDataset(records)

    rasters = {}
    if grid is not None:
        rasters["elevation"] = elevation[n:].reshape(grid.ny, grid.nx)
        rasters["vegetation"] = vegetation[n:].reshape(grid.ny, grid.nx)
        rasters["grid"] = grid

    truth = SyntheticTruth(
        beta=beta, sigma2=config.sigma2, tau2=config.tau2,
        phi=config.phi, kappa=config.kappa,
        site_ids=dataset.ids, u=u, z=z, t=t, p=p,
    )
    return dataset, rasters, truth
