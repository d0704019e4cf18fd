"""Binomial logistic regression baseline fitted by IRLS, plus the parametric
predictive simulation used to compare its intervals against the spatial model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, xlogy

from .errors import DataValidationError

log = logging.getLogger(__name__)

MAX_ABS_COEF = 15.0  # beyond this the fit is flagged as quasi-separated


def _as_matrix(X) -> np.ndarray:
    return np.asarray(getattr(X, "values", X), dtype=float)


@dataclass
class GlmFit:
    beta_hat: np.ndarray
    cov_hat: np.ndarray
    converged: bool
    iterations: int
    deviance: float
    deviance_path: list[float] = field(default_factory=list, repr=False)
    message: str = ""


def binomial_loglik(beta, X, y, n) -> float:
    """Full binomial log-likelihood (including the choose terms)."""
    Xv = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    eta = Xv @ np.asarray(beta, dtype=float)
    const = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    return float(np.sum(const + y * eta - n * np.logaddexp(0.0, eta)))


def binomial_deviance(beta, X, y, n) -> float:
    """2 * (saturated - fitted) log-likelihood."""
    Xv = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    ll_sat = float(np.sum(
        gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
        + xlogy(y, y / n) + xlogy(n - y, 1.0 - y / n)
    ))
    return 2.0 * (ll_sat - binomial_loglik(beta, Xv, y, n))


def irls_fit(X, y, n, *, max_iter: int = 100, score_tol: float = 1e-8,
             loglik_rtol: float = 1e-10, max_halvings: int = 10) -> GlmFit:
    """Maximize the binomial log-likelihood by Newton steps with step-halving.

    Starts at beta = 0.  Convergence when the score is below `score_tol` in
    max-norm or the relative log-likelihood change drops below `loglik_rtol`.
    Degenerate or separated data never raises: the fit comes back with
    converged=False and a diagnostic message.
    """
    Xv = _as_matrix(X)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    if Xv.shape[0] != y.shape[0] or y.shape[0] != n.shape[0]:
        raise DataValidationError("X, y and n must have matching lengths")
    if np.any(n < 1):
        raise DataValidationError("every trial count must be >= 1")
    if np.any(y < 0) or np.any(y > n):
        raise DataValidationError("counts must satisfy 0 <= y <= n")

    p_dim = Xv.shape[1]
    beta = np.zeros(p_dim)
    ll = binomial_loglik(beta, Xv, y, n)
    path = [binomial_deviance(beta, Xv, y, n)]
    hess = np.eye(p_dim)
    converged = False
    message = ""
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = Xv @ beta
        mu = n * expit(eta)
        weights = np.maximum(n * expit(eta) * expit(-eta), 1e-10)
        score = Xv.T @ (y - mu)
        hess = Xv.T @ (weights[:, None] * Xv)
        if np.max(np.abs(score)) < score_tol:
            converged = True
            break
        try:
            delta = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            message = "singular information matrix"
            break
        step = 1.0
        improved = False
        for _ in range(max_halvings + 1):
            candidate = beta + step * delta
            ll_new = binomial_loglik(candidate, Xv, y, n)
            if ll_new >= ll - 1e-12:
                improved = True
                break
            step *= 0.5
        if not improved:
            message = "step halving failed to improve the likelihood"
            break
        rel_change = abs(ll_new - ll) / (abs(ll) + 1.0)
        beta = candidate
        ll = ll_new
        path.append(binomial_deviance(beta, Xv, y, n))
        if rel_change < loglik_rtol:
            converged = True
            break
    if converged and np.max(np.abs(beta)) > MAX_ABS_COEF:
        converged = False
        message = "coefficients diverging; quasi-separation suspected"
    if converged:
        cov = np.linalg.inv(hess)
    else:
        cov = np.linalg.pinv(hess)
        if not message:
            message = f"no convergence within {max_iter} iterations"
        log.warning("IRLS did not converge: %s", message)
    return GlmFit(
        beta_hat=beta,
        cov_hat=cov,
        converged=converged,
        iterations=iterations,
        deviance=binomial_deviance(beta, Xv, y, n),
        deviance_path=path,
        message=message,
    )


def glm_predict_probs(fit: GlmFit, X_new) -> np.ndarray:
    """Fitted probabilities inverse-logit(X beta_hat), strictly inside (0, 1)."""
    if not fit.converged:
        raise DataValidationError(f"GLM fit did not converge: {fit.message}")
    p = expit(_as_matrix(X_new) @ fit.beta_hat)
    return np.clip(p, 1e-12, 1.0 - 1e-12)


def glm_parametric_counts(p_hat, n, draws: int, seed) -> np.ndarray:
    """draws x sites matrix of Binomial(n_j, p_hat_j) samples."""
    p_hat = np.asarray(p_hat, dtype=float)
    n = np.asarray(n, dtype=int)
    if p_hat.shape[0] != n.shape[0]:
        raise DataValidationError("p_hat and n must have matching lengths")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.binomial(n[None, :], p_hat[None, :], size=(draws, n.shape[0]))


def glm_parametric_total_counts(p_hat, n, draws: int, seed) -> np.ndarray:
    """Total-count draws: each is the sum over sites of one parametric sample."""
    return glm_parametric_counts(p_hat, n, draws, seed).sum(axis=1)
