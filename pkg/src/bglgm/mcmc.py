"""Whitened Metropolis-within-Gibbs sampler for the spatial binomial model.

One iteration updates, in order: each covariance-parameter coordinate with an
adaptive random-walk step (target acceptance 0.45), the regression block with
a fixed random-walk step, and the latent logits with a Langevin step whose
proposal drifts along the gradient of the log target.

The sampler state lives in the whitened coordinates, so the target density
carries the change-of-variables terms: the half log-determinants of the two
conditioning matrices plus the Jacobian of the covariance-parameter map,
log sigma + log phi + log tau - log(4 kappa).  Proposals whose covariance
matrix fails to factorize are rejected and counted, never fatal.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, gammaln

from . import glm, reparam
from .covariance import CovarianceModel, CovMatrix, matern_correlation, pairwise_distances
from .data import DesignMatrix, SpatialDataset
from .errors import DataValidationError, ParseError, SingularMatrixError
from .reparam import (
    ConditioningMatrices,
    PriorSpec,
    TransformedState,
    conditioning_matrices,
    profile_center,
    theta_to_tilde,
    tilde_to_theta,
    whiten,
)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
TARGET_ACCEPT_THETA = 0.45
STEP_FLOOR = 1e-8
_THETA_TILDE_BOUND = 350.0  # beyond this exp() over/underflows; treat as invalid


def default_mala_step(n_latent: int) -> float:
    """Recommended Langevin step 1.65^2 / n^(1/3) for an n-dimensional block."""
    return 1.65 ** 2 / float(n_latent) ** (1.0 / 3.0)


@dataclass
class McmcConfig:
    iterations: int = 100_000
    burn_in: int = 50_000
    thin: int = 10
    mala_h: float | None = None  # default 1.65^2 / n^(1/3)
    adapt_c1: float = 1.0
    adapt_c2: float = 0.6
    target_accept_theta: float = TARGET_ACCEPT_THETA
    beta_step: float | None = None  # default 2.4 / sqrt(p)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise DataValidationError("iterations must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise DataValidationError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise DataValidationError("thin must be >= 1")
        if self.mala_h is not None and self.mala_h <= 0:
            raise DataValidationError("mala_h must be positive")
        if self.adapt_c1 <= 0:
            raise DataValidationError("adapt_c1 must be positive")
        if not 0 < self.adapt_c2 <= 1:
            raise DataValidationError("adapt_c2 must be in (0, 1]")
        if self.beta_step is not None and self.beta_step <= 0:
            raise DataValidationError("beta_step must be positive")


@dataclass
class ChainOutput:
    """Thinned posterior draws in original coordinates plus diagnostics."""

    beta: np.ndarray   # (m, p)
    sigma: np.ndarray  # (m,) spatial sd
    tau: np.ndarray    # (m,) independent sd
    phi: np.ndarray    # (m,) range, km
    t: np.ndarray      # (m, n) latent logits
    accept_rates: dict
    step_trace: np.ndarray  # (iterations, 3) adaptive step history
    kappa: float = 1.5
    config: McmcConfig | None = None

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]


class _ThetaCache:
    """Per-theta factorizations plus the theta-only terms of the log target."""

    __slots__ = ("ok", "model", "cm", "theta_terms")

    def __init__(self, ok, model=None, cm=None, theta_terms=-math.inf):
        self.ok = ok
        self.model = model
        self.cm = cm
        self.theta_terms = theta_terms


_INVALID_CACHE = _ThetaCache(ok=False)


class ChainContext:
    """Data, priors and per-theta caches needed to evaluate the target.

    Holds an LRU of conditioning-matrix caches keyed on the covariance
    coordinates so that the current state and the pending proposal share no
    recomputation.
    """

    def __init__(self, y, n_trials, X, coords, prior: PriorSpec, kappa: float = 1.5):
        self.y = np.asarray(y, dtype=float)
        self.n_trials = np.asarray(n_trials, dtype=float)
        self.X = np.asarray(getattr(X, "values", X), dtype=float)
        self.coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        self.prior = prior
        self.kappa = float(kappa)
        self.center = profile_center(self.y, self.n_trials)
        self.distances = pairwise_distances(self.coords)
        self.n = self.y.shape[0]
        self.p = self.X.shape[1]
        self.loglik_const = float(np.sum(
            gammaln(self.n_trials + 1) - gammaln(self.y + 1)
            - gammaln(self.n_trials - self.y + 1)
        ))
        self.beta_const = -0.5 * (self.p * LOG_2PI + prior.log_det_omega)
        self._theta_caches: OrderedDict[bytes, _ThetaCache] = OrderedDict()
        self._corr_cache: OrderedDict[float, np.ndarray] = OrderedDict()

    # -- per-theta cache ---------------------------------------------------

    def _correlation(self, phi: float) -> np.ndarray:
        hit = self._corr_cache.get(phi)
        if hit is not None:
            self._corr_cache.move_to_end(phi)
            return hit
        # inline the half-integer closed forms; distances are prevalidated
        u = self.distances / phi
        if self.kappa == 1.5:
            corr = (1.0 + u) * np.exp(-u)
        elif self.kappa == 0.5:
            corr = np.exp(-u)
        elif self.kappa == 2.5:
            corr = (1.0 + u + u * u / 3.0) * np.exp(-u)
        else:
            corr = matern_correlation(self.distances, phi, self.kappa)
        self._corr_cache[phi] = corr
        if len(self._corr_cache) > 2:
            self._corr_cache.popitem(last=False)
        return corr

    def theta_cache(self, theta_tilde: np.ndarray) -> _ThetaCache:
        key = theta_tilde.tobytes()
        hit = self._theta_caches.get(key)
        if hit is not None:
            self._theta_caches.move_to_end(key)
            return hit
        cache = self._build_theta_cache(theta_tilde)
        self._theta_caches[key] = cache
        if len(self._theta_caches) > 3:
            self._theta_caches.popitem(last=False)
        return cache

    def _build_theta_cache(self, theta_tilde: np.ndarray) -> _ThetaCache:
        if not np.all(np.isfinite(theta_tilde)):
            return _INVALID_CACHE
        if np.max(np.abs(theta_tilde)) > _THETA_TILDE_BOUND:
            return _INVALID_CACHE
        model = tilde_to_theta(theta_tilde, self.kappa)
        if not all(map(math.isfinite, (model.sigma2, model.tau2, model.phi))):
            return _INVALID_CACHE
        if model.sigma2 <= 0 or model.tau2 <= 0 or model.phi <= 0:
            return _INVALID_CACHE
        sigma = math.sqrt(model.sigma2)
        tau = math.sqrt(model.tau2)
        prior_term = self.prior.log_prior_theta(sigma, tau, model.phi)
        # Jacobian of (theta_tilde -> (sigma, tau, phi)); the whitening map
        # determinants are added below once the factors exist.
        jac = (
            math.log(sigma) + math.log(model.phi) + math.log(tau)
            - math.log(4.0 * self.kappa)
        )
        if not math.isfinite(prior_term + jac):
            return _INVALID_CACHE
        values = model.sigma2 * self._correlation(model.phi)
        values.flat[:: self.n + 1] += model.tau2
        sigma_mat = CovMatrix(values)
        try:
            cm = conditioning_matrices(sigma_mat, self.X, self.center, self.prior)
        except SingularMatrixError:
            return _INVALID_CACHE
        logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(sigma_mat.factor()))))
        theta_terms = (
            prior_term + jac
            + cm.log_det_half_sigma + cm.log_det_half_omega
            - 0.5 * (logdet_sigma + self.n * LOG_2PI)
        )
        return _ThetaCache(ok=True, model=model, cm=cm, theta_terms=theta_terms)

    # -- target evaluation ---------------------------------------------------

    def _unwhitened(self, state: TransformedState, cache: _ThetaCache):
        hit = state._stash.get(("tb", id(self)))
        if hit is not None:
            return hit
        cm = cache.cm
        beta = cm.beta_center + cm.chol_omega_tilde @ state.beta_tilde
        t = cm.t_offset + cm.t_slope @ beta + cm.chol_sigma_tilde @ state.t_tilde
        x_beta = self.X @ beta
        state._stash[("tb", id(self))] = (t, beta, x_beta)
        return t, beta, x_beta

    def log_target(self, state: TransformedState) -> float:
        hit = state._stash.get(("lt", id(self)))
        if hit is not None:
            return hit
        cache = self.theta_cache(state.theta_tilde)
        if not cache.ok:
            state._stash[("lt", id(self))] = -math.inf
            return -math.inf
        t, beta, x_beta = self._unwhitened(state, cache)
        resid = t - x_beta
        quad_sigma = float(resid @ (cache.cm.sigma_inv @ resid))
        d_beta = beta - self.prior.mu
        quad_beta = float(d_beta @ (self.prior.omega_inv @ d_beta))
        loglik = float(self.y @ t - self.n_trials @ np.logaddexp(0.0, t))
        value = (
            cache.theta_terms
            - 0.5 * quad_sigma
            + self.beta_const - 0.5 * quad_beta
            + self.loglik_const + loglik
        )
        state._stash[("lt", id(self))] = value
        return value

    def grad_t_tilde(self, state: TransformedState) -> np.ndarray:
        hit = state._stash.get(("grad", id(self)))
        if hit is not None:
            return hit
        cache = self.theta_cache(state.theta_tilde)
        if not cache.ok:
            raise ValueError("gradient requested at an invalid state")
        t, _, x_beta = self._unwhitened(state, cache)
        score = (
            self.y - self.n_trials * expit(t)
            - cache.cm.sigma_inv @ (t - x_beta)
        )
        grad = cache.cm.chol_sigma_tilde.T @ score
        state._stash[("grad", id(self))] = grad
        return grad

    def unwhiten_state(self, state: TransformedState):
        cache = self.theta_cache(state.theta_tilde)
        if not cache.ok:
            raise ValueError("cannot unwhiten an invalid state")
        t, beta, _ = self._unwhitened(state, cache)
        return t, beta, cache.model


def log_target(state: TransformedState, context) -> float:
    """Log of the whitened posterior density, up to a constant."""
    return context.log_target(state)


def grad_log_target_t_tilde(state: TransformedState, context) -> np.ndarray:
    """Gradient of the log target with respect to the whitened latent block."""
    return context.grad_t_tilde(state)


def adaptive_step_update(s_prev: float, i: int, alpha_i: float, c1: float, c2: float,
                         target: float = TARGET_ACCEPT_THETA) -> float:
    """s_i = s_{i-1} + c1 i^{-c2} (alpha_i - target), floored at 1e-8."""
    if s_prev <= 0:
        raise ValueError("previous step must be positive")
    if i < 1:
        raise ValueError("iteration index must be >= 1")
    return max(s_prev + c1 * float(i) ** (-c2) * (alpha_i - target), STEP_FLOOR)


def rwmh_step(block, proposal_sd: float, state: TransformedState, context, rng) -> tuple[TransformedState, bool]:
    """One random-walk Metropolis update of one theta coordinate or the beta block.

    `block` is either ("theta", j) or "beta".  The proposal is symmetric
    Gaussian, so acceptance uses the plain target ratio.
    """
    if proposal_sd <= 0:
        raise ValueError("proposal_sd must be positive")
    if block == "beta":
        shift = proposal_sd * rng.standard_normal(state.beta_tilde.shape[0])
        candidate = TransformedState(
            state.theta_tilde, state.beta_tilde + shift, state.t_tilde
        )
    else:
        kind, coord = block
        if kind != "theta":
            raise ValueError(f"unknown block {block!r}")
        theta = state.theta_tilde.copy()
        theta[coord] += proposal_sd * rng.standard_normal()
        candidate = TransformedState(theta, state.beta_tilde, state.t_tilde)
    current_lt = log_target(state, context)
    candidate_lt = log_target(candidate, context)
    if candidate_lt == -math.inf:
        rng.uniform()  # burn the accept draw so rejection keeps the stream aligned
        return state, False
    if _log_uniform(rng) < candidate_lt - current_lt:
        return candidate, True
    return state, False


def _log_uniform(rng) -> float:
    u = rng.uniform()
    return math.log(u) if u > 0.0 else -math.inf


def mala_step(state: TransformedState, context, h: float, rng) -> tuple[TransformedState, bool]:
    """One Langevin update of the whitened latent block.

    Proposal t' ~ N(t + 0.5 h grad(t), h I); acceptance includes the
    asymmetric forward/reverse proposal densities.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    t_cur = state.t_tilde
    grad_cur = grad_log_target_t_tilde(state, context)
    mean_fwd = t_cur + 0.5 * h * grad_cur
    t_prop = mean_fwd + math.sqrt(h) * rng.standard_normal(t_cur.shape[0])
    candidate = TransformedState(state.theta_tilde, state.beta_tilde, t_prop)
    current_lt = log_target(state, context)
    candidate_lt = log_target(candidate, context)
    if not math.isfinite(candidate_lt):
        rng.uniform()
        return state, False
    grad_prop = grad_log_target_t_tilde(candidate, context)
    mean_rev = t_prop + 0.5 * h * grad_prop
    log_q_fwd = -float((t_prop - mean_fwd) @ (t_prop - mean_fwd)) / (2.0 * h)
    log_q_rev = -float((t_cur - mean_rev) @ (t_cur - mean_rev)) / (2.0 * h)
    log_ratio = candidate_lt - current_lt + log_q_rev - log_q_fwd
    if _log_uniform(rng) < log_ratio:
        return candidate, True
    return state, False


def make_context(train: SpatialDataset, X: DesignMatrix, prior: PriorSpec, kappa: float = 1.5) -> ChainContext:
    return ChainContext(
        y=train.y_hardwood,
        n_trials=train.n_total,
        X=X,
        coords=train.coords,
        prior=prior,
        kappa=kappa,
    )


def initial_state(context: ChainContext, config: McmcConfig) -> TransformedState:
    """Whitened initial point: IRLS coefficients (zero on non-convergence),
    latent logits at the profile centers, covariance parameters at their
    prior means."""
    fit = glm.irls_fit(context.X, context.y, context.n_trials)
    beta0 = fit.beta_hat if fit.converged else np.zeros(context.p)
    sigma0 = 1.0 / context.prior.sigma_rate
    tau0 = 1.0 / context.prior.tau_rate
    phi0 = context.prior.phi_shape * context.prior.phi_scale
    model0 = CovarianceModel(sigma0 ** 2, tau0 ** 2, phi0, context.kappa)
    cache = context.theta_cache(theta_to_tilde(model0))
    if not cache.ok:
        raise SingularMatrixError("initial covariance matrix failed to factorize")
    return whiten(context.center.t_hat, beta0, model0, cache.cm)


def run_chain(data: SpatialDataset, X: DesignMatrix, priors: PriorSpec,
              config: McmcConfig, kappa: float = 1.5,
              progress=None) -> ChainOutput:
    """Run the full sampler and return thinned draws in original coordinates.

    Deterministic given config.seed.  `progress`, if given, is called as
    progress(iteration, total) roughly every 10% of the run.
    """
    if len(data) < 2:
        raise DataValidationError("need at least two training sites")
    context = make_context(data, X, priors, kappa)
    rng = np.random.default_rng(config.seed)
    state = initial_state(context, config)

    n, p = context.n, context.p
    steps = np.ones(3)
    accept_theta = np.zeros(3)
    accept_beta = 0
    accept_t = 0
    h = config.mala_h if config.mala_h is not None else default_mala_step(n)
    beta_sd = config.beta_step if config.beta_step is not None else 2.4 / math.sqrt(p)

    n_draws = (config.iterations - config.burn_in) // config.thin
    out_beta = np.empty((n_draws, p))
    out_sigma = np.empty(n_draws)
    out_tau = np.empty(n_draws)
    out_phi = np.empty(n_draws)
    out_t = np.empty((n_draws, n))
    step_trace = np.empty((config.iterations, 3))

    report_every = max(1, config.iterations // 10)
    stored = 0
    for i in range(1, config.iterations + 1):
        for j in range(3):
            state, accepted = rwmh_step(("theta", j), steps[j], state, context, rng)
            accept_theta[j] += accepted
            steps[j] = adaptive_step_update(
                steps[j], i, accept_theta[j] / i,
                config.adapt_c1, config.adapt_c2, config.target_accept_theta,
            )
        step_trace[i - 1] = steps
        state, accepted = rwmh_step("beta", beta_sd, state, context, rng)
        accept_beta += accepted
        state, accepted = mala_step(state, context, h, rng)
        accept_t += accepted
        if i > config.burn_in and (i - config.burn_in) % config.thin == 0:
            t, beta, model = context.unwhiten_state(state)
            out_beta[stored] = beta
            out_sigma[stored] = math.sqrt(model.sigma2)
            out_tau[stored] = math.sqrt(model.tau2)
            out_phi[stored] = model.phi
            out_t[stored] = t
            stored += 1
        if progress is not None and i % report_every == 0:
            progress(i, config.iterations)

    total = float(config.iterations)
    accept_rates = {
        "theta_1": accept_theta[0] / total,
        "theta_2": accept_theta[1] / total,
        "theta_3": accept_theta[2] / total,
        "beta": accept_beta / total,
        "t": accept_t / total,
    }
    return ChainOutput(
        beta=out_beta, sigma=out_sigma, tau=out_tau, phi=out_phi, t=out_t,
        accept_rates=accept_rates, step_trace=step_trace,
        kappa=kappa, config=config,
    )


# -- chain files -------------------------------------------------------------

def _fmt(value: float) -> str:
    return repr(float(value))


def write_chain(chain: ChainOutput, path) -> int:
    """One row per retained draw: draw,beta*,sigma,tau,phi,t_*."""
    p = chain.beta.shape[1]
    n = chain.t.shape[1]
    cols = ["draw"] + [f"beta{j}" for j in range(p)] + ["sigma", "tau", "phi"]
    cols += [f"t_{k + 1}" for k in range(n)]
    lines = [",".join(cols)]
    cfg = chain.config
    for m in range(chain.n_draws):
        if cfg is not None:
            draw_id = cfg.burn_in + (m + 1) * cfg.thin
        else:
            draw_id = m + 1
        row = [str(draw_id)]
        row += [_fmt(v) for v in chain.beta[m]]
        row += [_fmt(chain.sigma[m]), _fmt(chain.tau[m]), _fmt(chain.phi[m])]
        row += [_fmt(v) for v in chain.t[m]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return chain.n_draws


def read_chain(path, kappa: float = 1.5) -> ChainOutput:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError("empty chain file")
    header = lines[0].split(",")
    try:
        sigma_idx = header.index("sigma")
        tau_idx = header.index("tau")
        phi_idx = header.index("phi")
    except ValueError as exc:
        raise ParseError(f"chain header missing column: {exc}") from exc
    p = sigma_idx - 1
    rows = [line.split(",") for line in lines[1:] if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows])
    if data.size == 0:
        raise ParseError("chain file has no draws")
    return ChainOutput(
        beta=data[:, 1:1 + p],
        sigma=data[:, sigma_idx],
        tau=data[:, tau_idx],
        phi=data[:, phi_idx],
        t=data[:, phi_idx + 1:],
        accept_rates={},
        step_trace=np.empty((0, 3)),
        kappa=kappa,
    )


def write_chain_diagnostics(chain: ChainOutput, path, trace_stride: int | None = None) -> int:
    """Acceptance rates as comments, then the (thinned) adaptive step trace."""
    lines = [f"# accept_rate.{name}={_fmt(rate)}" for name, rate in chain.accept_rates.items()]
    lines.append(f"# kappa={_fmt(chain.kappa)}")
    lines.append("iteration,s_theta_1,s_theta_2,s_theta_3")
    n_iter = chain.step_trace.shape[0]
    if trace_stride is None:
        trace_stride = max(1, n_iter // 2000)
    count = 0
    for i in range(0, n_iter, trace_stride):
        vals = chain.step_trace[i]
        lines.append(f"{i + 1},{_fmt(vals[0])},{_fmt(vals[1])},{_fmt(vals[2])}")
        count += 1
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return count
