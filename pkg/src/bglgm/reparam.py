"""Whitening machinery for the posterior sampler.

The latent logits and the regression block are recentred and rescaled with
conditioning matrices derived from a quadratic expansion of the likelihood
around per-site profile centers, which makes both blocks approximately
standard normal and mutually uncorrelated.  The covariance parameters get
their own log-scale reparameterization (log sigma, log sigma^2/phi^(2 kappa),
log tau^2).  All maps here have exact algebraic inverses; matrix square roots
are lower Cholesky factors throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .covariance import CovarianceModel, CovMatrix, chol_inverse, cholesky_lower
from .errors import DataValidationError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    """Priors: beta ~ N(mu, Omega), sigma and tau Exponential, phi Gamma.

    The Gamma prior on the range is parameterized by (shape, scale) in km, so
    its mean is shape * scale.  Derived quantities (Omega inverse, log
    determinant) are cached at construction.
    """

    mu: np.ndarray
    Omega: np.ndarray
    sigma_rate: float = 0.5
    tau_rate: float = 0.5
    phi_shape: float = 3.0
    phi_scale: float = 35.0
    omega_inv: np.ndarray = field(init=False, repr=False, compare=False)
    omega_inv_mu: np.ndarray = field(init=False, repr=False, compare=False)
    log_det_omega: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        omega = np.asarray(self.Omega, dtype=float)
        if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
            raise DataValidationError("Omega must be square")
        if mu.shape[0] != omega.shape[0]:
            raise DataValidationError("mu and Omega dimensions disagree")
        if not np.allclose(omega, omega.T, atol=1e-10):
            raise DataValidationError("Omega must be symmetric")
        for name in ("sigma_rate", "tau_rate", "phi_shape", "phi_scale"):
            if getattr(self, name) <= 0:
                raise DataValidationError(f"{name} must be positive")
        lower = cholesky_lower(omega)  # raises if not positive definite
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Omega", omega)
        object.__setattr__(self, "omega_inv", chol_inverse(lower))
        object.__setattr__(self, "omega_inv_mu", self.omega_inv @ mu)
        object.__setattr__(self, "log_det_omega", 2.0 * float(np.sum(np.log(np.diag(lower)))))

    @classmethod
    def default(cls, p: int = 4, omega_scale: float = 25.0, **kwargs) -> "PriorSpec":
        return cls(mu=np.zeros(p), Omega=omega_scale * np.eye(p), **kwargs)

    def log_prior_theta(self, sigma: float, tau: float, phi: float) -> float:
        """Log density of (sigma, tau, phi) under the independent priors."""
        if sigma <= 0 or tau <= 0 or phi <= 0:
            return -math.inf
        lp = math.log(self.sigma_rate) - self.sigma_rate * sigma
        lp += math.log(self.tau_rate) - self.tau_rate * tau
        lp += (
            (self.phi_shape - 1.0) * math.log(phi)
            - phi / self.phi_scale
            - self.phi_shape * math.log(self.phi_scale)
            - math.lgamma(self.phi_shape)
        )
        return lp

    def log_prior_beta(self, beta: np.ndarray) -> float:
        d = np.asarray(beta, dtype=float) - self.mu
        quad = float(d @ (self.omega_inv @ d))
        return -0.5 * (len(d) * LOG_2PI + self.log_det_omega + quad)


@dataclass(frozen=True)
class ProfileCenter:
    """Per-site likelihood centers t_hat and curvature magnitudes lambda."""

    t_hat: np.ndarray
    lambda_diag: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.lambda_diag) <= 0):
            raise DataValidationError("lambda_diag must be strictly positive")


def profile_center(y, n) -> ProfileCenter:
    """Continuity-corrected per-site likelihood maximizers and curvatures.

    t_hat_i = logit((y_i + 0.5) / (n_i + 1)) keeps the center finite at
    y in {0, n}; lambda_i = n_i p_i (1 - p_i) at p_i = expit(t_hat_i).
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(y < 0) or np.any(y > n) or np.any(n < 1):
        raise DataValidationError("need 0 <= y <= n and n >= 1")
    p = (y + 0.5) / (n + 1.0)
    t_hat = np.log(p / (1.0 - p))
    lam = n * p * (1.0 - p)
    return ProfileCenter(t_hat=t_hat, lambda_diag=lam)


def theta_to_tilde(model: CovarianceModel) -> np.ndarray:
    """(log sigma, log sigma^2/phi^(2 kappa), log tau^2)."""
    if model.sigma2 <= 0 or model.tau2 <= 0:
        raise ValueError("sigma2 and tau2 must be positive to transform")
    ls2 = math.log(model.sigma2)
    return np.array([
        0.5 * ls2,
        ls2 - 2.0 * model.kappa * math.log(model.phi),
        math.log(model.tau2),
    ])


def tilde_to_theta(theta_tilde, kappa: float = 1.5) -> CovarianceModel:
    """Exact inverse of `theta_to_tilde` for the given fixed kappa."""
    a, b, c = (float(v) for v in theta_tilde)
    sigma2 = math.exp(2.0 * a)
    phi = math.exp((2.0 * a - b) / (2.0 * kappa))
    tau2 = math.exp(c)
    return CovarianceModel(sigma2=sigma2, tau2=tau2, phi=phi, kappa=kappa)


@dataclass(eq=False)
class TransformedState:
    """Whitened sampler coordinates (theta_tilde, beta_tilde, t_tilde)."""

    theta_tilde: np.ndarray
    beta_tilde: np.ndarray
    t_tilde: np.ndarray
    # scratch for per-context evaluation caches (managed by bglgm.mcmc)
    _stash: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.theta_tilde = np.asarray(self.theta_tilde, dtype=float)
        self.beta_tilde = np.asarray(self.beta_tilde, dtype=float)
        self.t_tilde = np.asarray(self.t_tilde, dtype=float)


@dataclass
class ConditioningMatrices:
    """Conditioning matrices for one covariance-parameter value.

    sigma_tilde = (Sigma^-1 + Lambda)^-1 and omega_tilde are stored with
    their lower Cholesky factors and half log-determinants.  The cached mean
    map pieces make the whitening transforms and their inverses O(n^2):
      t mean      = t_offset + t_slope @ beta
      beta center = beta_center
    """

    sigma_tilde: np.ndarray
    chol_sigma_tilde: np.ndarray
    omega_tilde: np.ndarray
    chol_omega_tilde: np.ndarray
    log_det_half_sigma: float
    log_det_half_omega: float
    sigma_inv: np.ndarray
    sigma_inv_X: np.ndarray
    t_offset: np.ndarray
    t_slope: np.ndarray
    beta_center: np.ndarray


def conditioning_matrices(Sigma: CovMatrix, X, center: ProfileCenter, prior: PriorSpec) -> ConditioningMatrices:
    """Build the conditioning matrices for the given nugget-inclusive Sigma.

    These depend on the covariance parameters through Sigma and must be
    recomputed whenever those change.
    """
    Xv = np.asarray(getattr(X, "values", X), dtype=float)
    lam = center.lambda_diag
    lower_sigma = Sigma.factor()
    sigma_inv = chol_inverse(lower_sigma)
    precision = sigma_inv.copy()
    precision.flat[:: precision.shape[0] + 1] += lam
    sigma_tilde = chol_inverse(cholesky_lower(precision))
    chol_sigma_tilde = cholesky_lower(sigma_tilde)
    sigma_inv_X = sigma_inv @ Xv
    t_offset = sigma_tilde @ (lam * center.t_hat)
    t_slope = sigma_tilde @ sigma_inv_X
    omt_inv = prior.omega_inv + Xv.T @ sigma_inv_X - sigma_inv_X.T @ t_slope
    omt_inv = 0.5 * (omt_inv + omt_inv.T)
    omega_tilde = chol_inverse(cholesky_lower(omt_inv))
    chol_omega_tilde = cholesky_lower(omega_tilde)
    beta_center = omega_tilde @ (sigma_inv_X.T @ t_offset + prior.omega_inv_mu)
    return ConditioningMatrices(
        sigma_tilde=sigma_tilde,
        chol_sigma_tilde=chol_sigma_tilde,
        omega_tilde=omega_tilde,
        chol_omega_tilde=chol_omega_tilde,
        log_det_half_sigma=float(np.sum(np.log(np.diag(chol_sigma_tilde)))),
        log_det_half_omega=float(np.sum(np.log(np.diag(chol_omega_tilde)))),
        sigma_inv=sigma_inv,
        sigma_inv_X=sigma_inv_X,
        t_offset=t_offset,
        t_slope=t_slope,
        beta_center=beta_center,
    )


def whiten(t, beta, model: CovarianceModel, cm: ConditioningMatrices) -> TransformedState:
    """Map (t, beta, theta) to the whitened coordinates."""
    t = np.asarray(t, dtype=float)
    beta = np.asarray(beta, dtype=float)
    t_centered = t - (cm.t_offset + cm.t_slope @ beta)
    t_tilde = solve_triangular(cm.chol_sigma_tilde, t_centered, lower=True, check_finite=False)
    beta_tilde = solve_triangular(
        cm.chol_omega_tilde, beta - cm.beta_center, lower=True, check_finite=False
    )
    return TransformedState(theta_to_tilde(model), beta_tilde, t_tilde)


def unwhiten(state: TransformedState, cm: ConditioningMatrices, kappa: float = 1.5) -> tuple[np.ndarray, np.ndarray, CovarianceModel]:
    """Exact inverse of `whiten`; cm must match the theta implied by state."""
    model = tilde_to_theta(state.theta_tilde, kappa)
    beta = cm.beta_center + cm.chol_omega_tilde @ state.beta_tilde
    t = cm.t_offset + cm.t_slope @ beta + cm.chol_sigma_tilde @ state.t_tilde
    return t, beta, model
