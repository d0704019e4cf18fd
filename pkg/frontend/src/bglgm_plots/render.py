"""Figure rendering from the modelling CLI's output files.

Six figure kinds: parameter trace plots, prior/posterior density overlays,
probability rasters, per-plot count-posterior histograms, total-count
distributions with the true value marked, and per-plot interval charts.
Rendering is read-only and deterministic (fixed figure geometry, pinned
image metadata).
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PLOT_KINDS = ("trace", "density", "raster", "histogram", "totals", "intervals")

_SAVE_KWARGS = {"dpi": 110, "metadata": {"Software": "bglgm-plots"}}
_PARAM_LABELS = {
    "beta0": "intercept",
    "beta1": "elevation effect",
    "beta2": "vegetation below change point",
    "beta3": "vegetation above change point",
    "sigma": "spatial sd",
    "tau": "independent sd",
    "phi": "range (km)",
}


class RenderError(ValueError):
    """A required input file or column is missing or malformed."""


# -- input parsing -------------------------------------------------------------

def _require(path: Path) -> Path:
    if not path.exists():
        raise RenderError(f"missing required input file: {path.name}")
    return path


def read_chain(report_dir: Path) -> dict[str, np.ndarray]:
    path = _require(report_dir / "chain.csv")
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.asarray(body, dtype=float)
    out = {}
    for name in ("draw", "sigma", "tau", "phi"):
        if name not in header:
            raise RenderError(f"chain.csv misses column {name!r}")
        out[name] = data[:, header.index(name)]
    for name in header:
        if name.startswith("beta"):
            out[name] = data[:, header.index(name)]
    return out


def read_config(report_dir: Path) -> dict[str, str]:
    path = _require(report_dir / "config_resolved.txt")
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip() and "=" in line:
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def read_totals(report_dir: Path, model: str) -> np.ndarray:
    path = _require(report_dir / f"totals_{model}.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "total":
        raise RenderError(f"totals_{model}.csv misses the 'total' column")
    return np.asarray([float(v) for v in lines[1:] if v.strip()])


def read_count_matrix(report_dir: Path, name: str) -> tuple[list[str], np.ndarray]:
    path = _require(report_dir / name)
    with path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    site_ids = rows[0][1:]
    data = np.asarray([r[1:] for r in rows[1:]], dtype=float)
    return site_ids, data


def read_assessment(report_dir: Path) -> list[dict[str, str]]:
    path = _require(report_dir / "assessment.csv")
    with path.open(encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_validation_observations(report_dir: Path) -> dict[str, tuple[int, int]]:
    """Validation plot id -> (hardwood count, total trees)."""
    split_path = _require(report_dir / "split.txt")
    validation: set[str] = set()
    for line in split_path.read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("=")
        if key.strip() == "validation":
            validation = {v.strip() for v in value.split(",") if v.strip()}
    data_path = _require(report_dir / "dataset.csv")
    lines = [
        l for l in data_path.read_text(encoding="utf-8").splitlines()
        if l.strip() and not l.startswith("#")
    ]
    header = lines[0].split(",")
    idx = {name: header.index(name) for name in ("id", "n_total", "y_hardwood")}
    out = {}
    for line in lines[1:]:
        parts = line.split(",")
        sid = parts[idx["id"]]
        if sid in validation:
            out[sid] = (int(parts[idx["y_hardwood"]]), int(parts[idx["n_total"]]))
    if not out:
        raise RenderError("no validation plots found in dataset.csv/split.txt")
    return out


def read_raster(report_dir: Path, name: str = "mean_raster.asc") -> tuple[np.ndarray, dict[str, float]]:
    path = _require(report_dir / name)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = {}
    for i in range(6):
        key, _, value = lines[i].partition(" ")
        header[key.strip()] = float(value)
    values = np.asarray([[float(v) for v in line.split()] for line in lines[6:] if line.strip()])
    values[values == header["NODATA_value"]] = np.nan
    return values, header


# -- prior densities -------------------------------------------------------------

def _exponential_pdf(x: np.ndarray, rate: float) -> np.ndarray:
    return np.where(x >= 0, rate * np.exp(-rate * x), 0.0)


def _gamma_pdf(x: np.ndarray, shape: float, scale: float) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0
    log_pdf = (
        (shape - 1) * np.log(x[pos]) - x[pos] / scale
        - shape * math.log(scale) - math.lgamma(shape)
    )
    out[pos] = np.exp(log_pdf)
    return out


def _normal_pdf(x: np.ndarray, mean: float, sd: float) -> np.ndarray:
    z = (x - mean) / sd
    return np.exp(-0.5 * z * z) / (sd * math.sqrt(2 * math.pi))


def prior_curves(config: dict[str, str], samples: dict[str, np.ndarray],
                 n_grid: int = 2000) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Analytic prior density on a grid wide enough to hold its mass.

    Returns {parameter: (grid, density)} for every parameter with a prior;
    each density integrates to ~1 over its grid (checked in the tests by
    quadrature).
    """
    sigma_rate = float(config["prior.sigma_rate"])
    tau_rate = float(config["prior.tau_rate"])
    phi_shape = float(config["prior.phi_shape"])
    phi_scale = float(config["prior.phi_scale"])
    mu = [float(v) for v in config["prior.mu"].split(",")]
    omega_sd = math.sqrt(float(config["prior.omega_diag"]))

    curves = {}
    for name, rate in (("sigma", sigma_rate), ("tau", tau_rate)):
        hi = max(-math.log(1e-5) / rate, float(np.max(samples[name])) * 1.05)
        grid = np.linspace(0.0, hi, n_grid)
        curves[name] = (grid, _exponential_pdf(grid, rate))
    hi = max(
        phi_scale * (phi_shape + 10.0 * math.sqrt(phi_shape)),
        float(np.max(samples["phi"])) * 1.05,
    )
    grid = np.linspace(0.0, hi, n_grid)
    curves["phi"] = (grid, _gamma_pdf(grid, phi_shape, phi_scale))
    for j, mean in enumerate(mu):
        name = f"beta{j}"
        if name not in samples:
            continue
        lo = min(mean - 6 * omega_sd, float(np.min(samples[name])))
        hi = max(mean + 6 * omega_sd, float(np.max(samples[name])))
        grid = np.linspace(lo, hi, n_grid)
        curves[name] = (grid, _normal_pdf(grid, mean, omega_sd))
    return curves


# -- figure kinds -----------------------------------------------------------------

def _chain_parameters(chain: dict[str, np.ndarray]) -> list[str]:
    betas = sorted(k for k in chain if k.startswith("beta"))
    return betas + ["sigma", "tau", "phi"]


def _render_trace(report_dir: Path, out: Path) -> None:
    chain = read_chain(report_dir)
    params = _chain_parameters(chain)
    fig, axes = plt.subplots(len(params), 1, figsize=(8, 1.6 * len(params)),
                             sharex=True, constrained_layout=True)
    for ax, name in zip(np.atleast_1d(axes), params):
        ax.plot(chain["draw"], chain[name], lw=0.5, color="#336699")
        ax.set_ylabel(name)
        ax.set_title(_PARAM_LABELS.get(name, name), fontsize=8, loc="right")
    np.atleast_1d(axes)[-1].set_xlabel("iteration")
    fig.suptitle("posterior trace plots")
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def _render_density(report_dir: Path, out: Path) -> None:
    chain = read_chain(report_dir)
    config = read_config(report_dir)
    params = _chain_parameters(chain)
    curves = prior_curves(config, chain)
    ncols = 2
    nrows = (len(params) + 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(9, 2.4 * nrows),
                             constrained_layout=True)
    flat = np.ravel(axes)
    for ax, name in zip(flat, params):
        samples = chain[name]
        ax.hist(samples, bins=40, density=True, color="#88bbdd",
                alpha=0.8, label="posterior")
        if name in curves:
            grid, density = curves[name]
            lo, hi = samples.min(), samples.max()
            pad = 0.25 * (hi - lo + 1e-9)
            view = (grid >= lo - pad) & (grid <= hi + pad)
            ax.plot(grid[view], density[view], color="#aa3333", lw=1.2, label="prior")
        ax.set_title(_PARAM_LABELS.get(name, name), fontsize=9)
        ax.legend(fontsize=7)
    for ax in flat[len(params):]:
        ax.axis("off")
    fig.suptitle("prior and posterior densities")
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def raster_rgba(values: np.ndarray, vmin: float = 0.0, vmax: float = 1.0) -> np.ndarray:
    """Colormapped RGBA raster; NODATA (NaN) cells get alpha 0 (transparent)."""
    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad(alpha=0.0)
    masked = np.ma.masked_invalid(np.asarray(values, dtype=float))
    return cmap(plt.Normalize(vmin, vmax)(masked))


def _render_raster(report_dir: Path, out: Path) -> None:
    values, header = read_raster(report_dir)
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    cell = header["cellsize"]
    extent = (
        header["xllcorner"], header["xllcorner"] + ncols * cell,
        header["yllcorner"], header["yllcorner"] + nrows * cell,
    )
    fig, ax = plt.subplots(figsize=(6.5, 5.5), constrained_layout=True)
    ax.imshow(raster_rgba(values), origin="upper", extent=extent)
    scale = plt.cm.ScalarMappable(norm=plt.Normalize(0.0, 1.0), cmap="viridis")
    fig.colorbar(scale, ax=ax, label="posterior mean probability")
    ax.set_xlabel("easting (km)")
    ax.set_ylabel("northing (km)")
    ax.set_title("posterior mean probability surface")
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def _render_histogram(report_dir: Path, out: Path) -> None:
    site_ids, counts = read_count_matrix(report_dir, "site_counts.csv")
    observed = read_validation_observations(report_dir)
    props = {
        sid: observed[sid][0] / observed[sid][1]
        for sid in site_ids if sid in observed
    }
    if not props:
        raise RenderError("site_counts.csv columns not found among validation plots")
    hi_site = max(props, key=lambda s: (props[s], s))
    lo_site = min(props, key=lambda s: (props[s], s))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), constrained_layout=True)
    for ax, sid, label in (
        (axes[0], hi_site, "highest observed proportion"),
        (axes[1], lo_site, "lowest observed proportion"),
    ):
        column = counts[:, site_ids.index(sid)]
        bins = np.arange(column.min() - 0.5, column.max() + 1.5)
        ax.hist(column, bins=bins, color="#669966", density=True)
        ax.axvline(observed[sid][0], color="#228822", lw=1.6,
                   label=f"true count {observed[sid][0]}")
        ax.set_title(f"plot {sid} ({label})", fontsize=9)
        ax.set_xlabel("hardwood count")
        ax.legend(fontsize=7)
    fig.suptitle("count posteriors at two validation plots")
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def _total_truth(report_dir: Path) -> float:
    for row in read_assessment(report_dir):
        if row["row_type"] == "summary" and row["total_truth"]:
            return float(row["total_truth"])
    raise RenderError("assessment.csv has no summary row with total_truth")


def _render_totals(report_dir: Path, out: Path) -> None:
    truth = _total_truth(report_dir)
    models = [("bglgm", "spatial model"), ("glm", "logistic baseline")]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6), sharex=True,
                             constrained_layout=True)
    for ax, (model, label) in zip(axes, models):
        totals = read_totals(report_dir, model)
        ax.hist(totals, bins=40, color="#7788cc", density=True)
        ax.axvline(truth, color="green", lw=1.8, label=f"true total {truth:.0f}")
        ax.set_title(label, fontsize=10)
        ax.set_xlabel("total hardwood count")
        ax.legend(fontsize=8)
    fig.suptitle("posterior of the total validation hardwood count")
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


def _render_intervals(report_dir: Path, out: Path) -> None:
    rows = read_assessment(report_dir)
    site_rows = [r for r in rows if r["row_type"] == "site" and float(r["level"]) == 0.95]
    if not site_rows:
        raise RenderError("assessment.csv has no site rows at level 0.95")
    models = sorted({r["model"] for r in site_rows})
    site_ids = sorted({r["site_id"] for r in site_rows})
    colors = {"bglgm": "#334499", "glm": "#cc8833"}
    fig, ax = plt.subplots(figsize=(9, 0.35 * len(site_ids) + 2),
                           constrained_layout=True)
    offsets = np.linspace(-0.18, 0.18, len(models))
    for off, model in zip(offsets, models):
        for pos, sid in enumerate(site_ids):
            row = next(r for r in site_rows if r["model"] == model and r["site_id"] == sid)
            ax.plot([float(row["lo"]), float(row["hi"])], [pos + off] * 2,
                    color=colors.get(model, "gray"), lw=2.2,
                    label=model if pos == 0 else None)
    for pos, sid in enumerate(site_ids):
        truth = float(next(r for r in site_rows if r["site_id"] == sid)["truth"])
        ax.plot(truth, pos, "k.", ms=6, label="truth" if pos == 0 else None)
    ax.set_yticks(range(len(site_ids)))
    ax.set_yticklabels(site_ids, fontsize=7)
    ax.set_xlabel("hardwood count")
    ax.set_title("95% narrowest count intervals by validation plot")
    ax.legend(fontsize=8)
    fig.savefig(out, **_SAVE_KWARGS)
    plt.close(fig)


_RENDERERS = {
    "trace": _render_trace,
    "density": _render_density,
    "raster": _render_raster,
    "histogram": _render_histogram,
    "totals": _render_totals,
    "intervals": _render_intervals,
}


def render(report_dir, kind: str, out) -> Path:
    """Render one figure of the given kind from a completed run directory."""
    if kind not in _RENDERERS:
        raise RenderError(f"unknown plot kind {kind!r}; choose from {PLOT_KINDS}")
    report_dir = Path(report_dir)
    if not report_dir.is_dir():
        raise RenderError(f"report directory not found: {report_dir}")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _RENDERERS[kind](report_dir, out)
    return out
