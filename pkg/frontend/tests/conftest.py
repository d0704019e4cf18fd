import shutil
import subprocess

import pytest

# a complete desk-scale run produced through the modelling CLI, the only
# coupling between this renderer and the modelling package
RUN_CONFIG = """\
seed=915
data.n_sites=50
data.raster_nx=10
data.raster_ny=10
split.n_validation=15
split.n_train=30
truth.sigma2=0.3
truth.tau2=0.8
truth.phi_km=2.5
prior.phi_scale=2.0
mcmc.iterations=1000
mcmc.burn_in=500
mcmc.thin=10
predict.grid=true
predict.draw_subsample=40
predict.sample_rasters=2
glm.draws=2000
"""


@pytest.fixture(scope="session")
def run_dir(tmp_path_factory):
    exe = shutil.which("bglgm")
    if exe is None:
        pytest.skip("modelling CLI (bglgm) not installed")
    base = tmp_path_factory.mktemp("pipeline")
    config = base / "run.cfg"
    config.write_text(RUN_CONFIG)
    out = base / "out"
    proc = subprocess.run(
        [exe, "pipeline", "--config", str(config), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return out
