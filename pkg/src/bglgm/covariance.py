"""Matern correlation, covariance assembly and Gaussian field simulation.

Kernel evaluation is pure and thread-safe; every draw owns its own seeded
generator, so concurrent draws share no mutable state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, get_lapack_funcs, solve_triangular

from .bessel import bessel_k
from .errors import SingularMatrixError

log = logging.getLogger(__name__)

KAPPA_DEFAULT = 1.5

# below this scaled distance the kernel is treated as exactly zero distance
_ZERO_SCALED_DISTANCE = 1e-12


@dataclass(frozen=True)
class CovarianceModel:
    """Matern field parameters: partial sill sigma2, nugget tau2, range phi (km)."""

    sigma2: float
    tau2: float
    phi: float
    kappa: float = KAPPA_DEFAULT

    def __post_init__(self):
        for name in ("sigma2", "tau2", "phi", "kappa"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sigma2 < 0 or self.tau2 < 0:
            raise ValueError("variances must be nonnegative")
        if self.phi <= 0 or self.kappa <= 0:
            raise ValueError("phi and kappa must be positive")


def matern_correlation(h, phi: float, kappa: float = KAPPA_DEFAULT):
    """Matern correlation rho(h; phi, kappa), with rho(0) = 1 by continuity.

    Half-integer kappa in {0.5, 1.5, 2.5} uses the exact closed forms; other
    orders go through the general Bessel-K evaluation.
    """
    if not (math.isfinite(phi) and math.isfinite(kappa)):
        raise ValueError("phi and kappa must be finite")
    if phi <= 0 or kappa <= 0:
        raise ValueError("phi and kappa must be positive")
    arr = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("distances must be finite")
    if np.any(arr < 0):
        raise ValueError("distances must be nonnegative")
    u = arr / phi
    if kappa == 0.5:
        rho = np.exp(-u)
    elif kappa == 1.5:
        rho = (1.0 + u) * np.exp(-u)
    elif kappa == 2.5:
        rho = (1.0 + u + u * u / 3.0) * np.exp(-u)
    else:
        scale = 1.0 / (2.0 ** (kappa - 1.0) * math.gamma(kappa))
        with np.errstate(invalid="ignore", over="ignore"):
            rho = scale * u ** kappa * bessel_k(kappa, u)
        rho = np.where(u < _ZERO_SCALED_DISTANCE, 1.0, rho)
        rho = np.minimum(rho, 1.0)
    if np.isscalar(h) or arr.ndim == 0:
        return float(rho)
    return rho


def pairwise_distances(coords) -> np.ndarray:
    pts = np.asarray(coords, dtype=float).reshape(-1, 2)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def cross_distances(a, b) -> np.ndarray:
    pa = np.asarray(a, dtype=float).reshape(-1, 2)
    pb = np.asarray(b, dtype=float).reshape(-1, 2)
    diff = pa[:, None, :] - pb[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


_POTRF, _TRTRI = get_lapack_funcs(("potrf", "trtri"), (np.empty((1, 1), dtype=float),))


def cholesky_lower(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises SingularMatrixError naming the minor.

    The returned factor has an exactly zero strict upper triangle.
    """
    c, info = _POTRF(a, lower=True, overwrite_a=False, clean=True)
    if info > 0:
        raise SingularMatrixError(
            f"matrix is not positive definite: leading minor of order {info} "
            "failed Cholesky factorization",
            minor=int(info),
        )
    if info < 0:
        raise ValueError(f"invalid argument {-info} passed to dpotrf")
    return c


def chol_inverse(lower: np.ndarray) -> np.ndarray:
    """Dense symmetric inverse of L L^T from its lower Cholesky factor.

    Computed as L^-T L^-1, which is bitwise symmetric (dtrtri is much faster
    than dpotri in this LAPACK build).
    """
    lower_inv, info = _TRTRI(lower, lower=True, overwrite_c=False)
    if info != 0:
        raise SingularMatrixError("failed to invert Cholesky factor", minor=int(info))
    return lower_inv.T @ lower_inv


@dataclass
class CovMatrix:
    """Dense symmetric covariance matrix with a lazily cached Cholesky factor."""

    values: np.ndarray
    _factor: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def factor(self) -> np.ndarray:
        """Lower Cholesky factor, computed once on first request."""
        if self._factor is None:
            self._factor = cholesky_lower(self.values)
        return self._factor


def build_covariance_matrix(sites, model: CovarianceModel, include_nugget: bool = True) -> CovMatrix:
    """sigma2 * rho(d_ij) off-diagonal; diagonal sigma2 (+ tau2 with nugget)."""
    coords = np.asarray(sites, dtype=float).reshape(-1, 2)
    if coords.shape[0] < 1:
        raise ValueError("need at least one site")
    dist = pairwise_distances(coords)
    vals = model.sigma2 * matern_correlation(dist, model.phi, model.kappa)
    diag = model.sigma2 + (model.tau2 if include_nugget else 0.0)
    np.fill_diagonal(vals, diag)
    return CovMatrix(vals)


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def unconditional_field_draw(sites, model: CovarianceModel, seed) -> np.ndarray:
    """One mean-zero field draw at the sites (no nugget), L z with z standard normal."""
    rng = _as_generator(seed)
    coords = np.asarray(sites, dtype=float).reshape(-1, 2)
    n = coords.shape[0]
    if model.sigma2 == 0.0:
        rng.standard_normal(n)  # keep the generator stream aligned
        return np.zeros(n)
    lower = build_covariance_matrix(coords, model, include_nugget=False).factor()
    return lower @ rng.standard_normal(n)


def _psd_factor(a: np.ndarray) -> np.ndarray:
    """Factor F with F F^T = a; falls back to clipped eigendecomposition when
    the conditional covariance is only positive semidefinite."""
    try:
        return cholesky_lower(a)
    except SingularMatrixError:
        w, v = np.linalg.eigh(0.5 * (a + a.T))
        cut = max(w.max(), 0.0) * 1e-12
        w = np.where(w > cut, w, 0.0)
        return v * np.sqrt(w)


def conditional_field_draw(obs_sites, obs_values, target_sites, model: CovarianceModel, seed) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and one draw of the field at target sites.

    The conditioning variable is the observed field plus nugget, so the
    observation covariance includes tau2 on its diagonal while the cross and
    target covariances do not.  Returns (mean, draw); deterministic given the
    seed.
    """
    rng = _as_generator(seed)
    obs = np.asarray(obs_sites, dtype=float).reshape(-1, 2)
    targets = np.asarray(target_sites, dtype=float).reshape(-1, 2)
    w = np.asarray(obs_values, dtype=float)
    if w.shape[0] != obs.shape[0]:
        raise ValueError("obs_values length must match obs_sites")
    n_targets = targets.shape[0]
    if model.sigma2 == 0.0:
        rng.standard_normal(n_targets)
        return np.zeros(n_targets), np.zeros(n_targets)
    obs_cov = build_covariance_matrix(obs, model, include_nugget=True)
    lower = obs_cov.factor()
    cross = model.sigma2 * matern_correlation(
        cross_distances(targets, obs), model.phi, model.kappa
    )
    mean = cross @ cho_solve((lower, True), w, check_finite=False)
    half = solve_triangular(lower, cross.T, lower=True, check_finite=False)
    target_cov = model.sigma2 * matern_correlation(
        pairwise_distances(targets), model.phi, model.kappa
    )
    np.fill_diagonal(target_cov, model.sigma2)
    cond_cov = target_cov - half.T @ half
    draw = mean + _psd_factor(cond_cov) @ rng.standard_normal(n_targets)
    return mean, draw
