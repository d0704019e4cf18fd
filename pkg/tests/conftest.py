import numpy as np
import pytest

from bglgm.cli import run_command
from bglgm.data import build_design_matrix
from bglgm.reparam import PriorSpec
from bglgm.sampling import SyntheticConfig, generate_synthetic_dataset

REPO_SMOKE_CONFIG = "configs/smoke.cfg"


class GaussianTarget:
    """Stand-in evaluation context whose target is an independent Gaussian
    over selected whitened blocks; used to test the samplers in isolation."""

    def __init__(self, t_mean=None, t_var=1.0, theta_mean=None, theta_var=1.0,
                 beta_mean=None, beta_var=1.0):
        self.t_mean = None if t_mean is None else np.asarray(t_mean, dtype=float)
        self.t_var = t_var
        self.theta_mean = None if theta_mean is None else np.asarray(theta_mean, dtype=float)
        self.theta_var = theta_var
        self.beta_mean = None if beta_mean is None else np.asarray(beta_mean, dtype=float)
        self.beta_var = beta_var

    def log_target(self, state) -> float:
        lp = 0.0
        if self.t_mean is not None:
            d = state.t_tilde - self.t_mean
            lp -= 0.5 * float(np.sum(d * d / self.t_var))
        if self.theta_mean is not None:
            d = state.theta_tilde - self.theta_mean
            lp -= 0.5 * float(np.sum(d * d / self.theta_var))
        if self.beta_mean is not None:
            d = state.beta_tilde - self.beta_mean
            lp -= 0.5 * float(np.sum(d * d / self.beta_var))
        return lp

    def grad_t_tilde(self, state) -> np.ndarray:
        return -(state.t_tilde - self.t_mean) / self.t_var


@pytest.fixture
def gaussian_target_cls():
    return GaussianTarget


def small_problem(n_sites=12, seed=5, sigma2=0.6, tau2=0.8, phi=2.0):
    """A small synthetic instance plus matching design matrix and priors."""
    config = SyntheticConfig(
        n_sites=n_sites, box_km=8.0, sigma2=sigma2, tau2=tau2, phi=phi, seed=seed,
        n_total_min=8, n_total_max=25,
    )
    data, _, truth = generate_synthetic_dataset(config)
    X = build_design_matrix(data)
    prior = PriorSpec.default(phi_shape=3.0, phi_scale=2.0)
    return data, X, prior, truth


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    """One completed pipeline directory from the bundled 50-site config."""
    out = tmp_path_factory.mktemp("smoke_run")
    code = run_command(["pipeline", "--config", REPO_SMOKE_CONFIG, "--out", str(out)])
    assert code == 0
    return out
