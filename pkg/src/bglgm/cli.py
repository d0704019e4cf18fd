"""Batch command-line interface.

Subcommands mirror the experimental workflow: ``simulate`` a synthetic
dataset, ``subsample`` train/validation sites, ``fit`` the spatial model,
``glm`` the logistic baseline, ``predict`` validation sites and rasters,
``assess`` both models, or run the whole ``pipeline``.  All randomness
derives from one master seed; identical config and seed give byte-identical
outputs (timestamps are confined to run.log).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import assess as assess_mod
from . import glm as glm_mod
from . import mcmc as mcmc_mod
from . import predict as predict_mod
from . import sampling
from .data import (
    DesignConstants,
    SpatialDataset,
    SplitSpec,
    build_design_matrix,
    load_dataset,
    load_split,
    split_train_validation,
    write_dataset,
    write_split,
)
from .errors import BglgmError, ConfigError
from .reparam import PriorSpec

log = logging.getLogger(__name__)

_STAGE_IDS = {
    "simulate": 1,
    "subsample": 2,
    "fit": 3,
    "glm": 4,
    "predict": 5,
    "assess": 6,
}

PRESETS = {
    "desk_scale": {"mcmc.iterations": 100_000, "mcmc.burn_in": 50_000, "mcmc.thin": 10},
    "paper_scale": {"mcmc.iterations": 2_000_000, "mcmc.burn_in": 1_000_000, "mcmc.thin": 100},
}


def _positive(v):
    return v > 0


def _nonnegative(v):
    return v >= 0


@dataclass(frozen=True)
class _Key:
    kind: str  # int | float | floats | str | bool | choice
    default: object
    check: object = None
    choices: tuple = ()


def _key(kind, default, check=None, choices=()):
    return _Key(kind=kind, default=default, check=check, choices=choices)


CONFIG_SCHEMA = {
    "seed": _key("int", 20260810),
    "replications": _key("int", 1, _positive),
    "preset": _key("choice", "desk_scale", choices=tuple(PRESETS)),
    "data.n_sites": _key("int", 60, _positive),
    "data.box_km": _key("float", 10.0, _positive),
    "data.n_total_min": _key("int", 15, _positive),
    "data.n_total_max": _key("int", 40, _positive),
    "data.raster_nx": _key("int", 0, _nonnegative),
    "data.raster_ny": _key("int", 0, _nonnegative),
    "truth.beta": _key("floats", (-1.0, 0.6, 0.5, 0.4)),
    "truth.sigma2": _key("float", 0.25, _nonnegative),
    "truth.tau2": _key("float", 1.0, _nonnegative),
    "truth.phi_km": _key("float", 2.5, _positive),
    "truth.kappa": _key("float", 1.5, _positive),
    "covariates.elev_mean": _key("float", 320.0),
    "covariates.elev_sd": _key("float", 50.0, _positive),
    "covariates.elev_range_km": _key("float", 3.0, _positive),
    "covariates.veg_center": _key("float", -0.4),
    "covariates.veg_scale": _key("float", 1.1, _positive),
    "covariates.veg_range_km": _key("float", 2.0, _positive),
    "design.elev_center": _key("float", 320.0),
    "design.elev_scale": _key("float", 50.0, _positive),
    "design.veg_change_point": _key("float", 0.3),
    "design.veg_scale": _key("float", 0.05, _positive),
    "split.n_validation": _key("int", 20, _positive),
    "split.n_train": _key("int", 40, _positive),
    "split.method": _key("choice", "random", choices=("random", "stratified")),
    "split.strata_k": _key("int", 3, _positive),
    "model.kappa": _key("float", 1.5, _positive),
    "prior.mu": _key("floats", (0.0, 0.0, 0.0, 0.0)),
    "prior.omega_diag": _key("float", 25.0, _positive),
    "prior.sigma_rate": _key("float", 0.5, _positive),
    "prior.tau_rate": _key("float", 0.5, _positive),
    "prior.phi_shape": _key("float", 3.0, _positive),
    "prior.phi_scale": _key("float", 35.0, _positive),
    "mcmc.iterations": _key("int", 100_000, _positive),
    "mcmc.burn_in": _key("int", 50_000, _nonnegative),
    "mcmc.thin": _key("int", 10, _positive),
    "mcmc.c1": _key("float", 1.0, _positive),
    "mcmc.c2": _key("float", 0.6, lambda v: 0 < v <= 1),
    "mcmc.beta_step": _key("float", 0.0, _nonnegative),  # 0 = auto 2.4/sqrt(p)
    "mcmc.mala_h": _key("float", 0.0, _nonnegative),     # 0 = auto 1.65^2/n^(1/3)
    "mcmc.chains": _key("int", 1, _positive),
    "predict.grid": _key("bool", False),
    "predict.draw_subsample": _key("int", 1000, _positive),
    "predict.sample_rasters": _key("int", 3, _nonnegative),
    "glm.draws": _key("int", 10_000, _positive),
    "assess.levels": _key("floats", (0.95, 0.8, 0.5)),
}


class RunConfig:
    """Typed view over the resolved key=value configuration."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    def design_constants(self) -> DesignConstants:
        return DesignConstants(
            elev_center=self["design.elev_center"],
            elev_scale=self["design.elev_scale"],
            veg_change_point=self["design.veg_change_point"],
            veg_scale=self["design.veg_scale"],
        )

    def prior_spec(self) -> PriorSpec:
        mu = np.asarray(self["prior.mu"], dtype=float)
        return PriorSpec(
            mu=mu,
            Omega=self["prior.omega_diag"] * np.eye(mu.shape[0]),
            sigma_rate=self["prior.sigma_rate"],
            tau_rate=self["prior.tau_rate"],
            phi_shape=self["prior.phi_shape"],
            phi_scale=self["prior.phi_scale"],
        )

    def synthetic_config(self, seed: int) -> sampling.SyntheticConfig:
        return sampling.SyntheticConfig(
            n_sites=self["data.n_sites"],
            box_km=self["data.box_km"],
            beta=self["truth.beta"],
            sigma2=self["truth.sigma2"],
            tau2=self["truth.tau2"],
            phi=self["truth.phi_km"],
            kappa=self["truth.kappa"],
            n_total_min=self["data.n_total_min"],
            n_total_max=self["data.n_total_max"],
            elev_mean=self["covariates.elev_mean"],
            elev_sd=self["covariates.elev_sd"],
            elev_range_km=self["covariates.elev_range_km"],
            veg_center=self["covariates.veg_center"],
            veg_scale=self["covariates.veg_scale"],
            veg_range_km=self["covariates.veg_range_km"],
            raster_nx=self["data.raster_nx"],
            raster_ny=self["data.raster_ny"],
            seed=seed,
            design=self.design_constants(),
        )

    def mcmc_config(self, seed: int) -> mcmc_mod.McmcConfig:
        return mcmc_mod.McmcConfig(
            iterations=self["mcmc.iterations"],
            burn_in=self["mcmc.burn_in"],
            thin=self["mcmc.thin"],
            mala_h=self["mcmc.mala_h"] or None,
            adapt_c1=self["mcmc.c1"],
            adapt_c2=self["mcmc.c2"],
            beta_step=self["mcmc.beta_step"] or None,
            seed=seed,
        )


def _parse_value(key: str, raw: str, spec: _Key, line: int):
    raw = raw.strip()
    try:
        if spec.kind == "int":
            value = int(raw)
        elif spec.kind == "float":
            value = float(raw)
        elif spec.kind == "floats":
            value = tuple(float(v) for v in raw.split(",") if v.strip())
            if not value:
                raise ValueError("empty list")
        elif spec.kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                value = True
            elif low in ("false", "0", "no"):
                value = False
            else:
                raise ValueError(f"not a boolean: {raw!r}")
        elif spec.kind == "choice":
            if raw not in spec.choices:
                raise ValueError(f"must be one of {spec.choices}")
            value = raw
        else:  # str
            value = raw
    except ValueError as exc:
        raise ConfigError(f"line {line}: {key}: {exc}") from exc
    if spec.check is not None:
        ok = all(spec.check(v) for v in value) if spec.kind == "floats" else spec.check(value)
        if not ok:
            raise ConfigError(f"line {line}: {key}={raw}: value out of range")
    return value


def load_config(path=None) -> RunConfig:
    """Parse key=value lines; unknown keys are rejected, defaults documented
    in CONFIG_SCHEMA.  A preset fills the iteration trio unless overridden."""
    explicit = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in explicit:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            explicit[key] = _parse_value(key, value, CONFIG_SCHEMA[key], lineno)
    values = {key: spec.default for key, spec in CONFIG_SCHEMA.items()}
    preset = explicit.get("preset", values["preset"])
    values.update(PRESETS[preset])
    values.update(explicit)
    _validate_config(values)
    return RunConfig(values)


def _validate_config(values: dict) -> None:
    if values["mcmc.burn_in"] >= values["mcmc.iterations"]:
        raise ConfigError("mcmc.burn_in must be smaller than mcmc.iterations")
    if values["data.n_total_min"] > values["data.n_total_max"]:
        raise ConfigError("data.n_total_min exceeds data.n_total_max")
    if len(values["truth.beta"]) != 4:
        raise ConfigError("truth.beta must list four coefficients")
    if len(values["prior.mu"]) != 4:
        raise ConfigError("prior.mu must list four coefficients")
    if values["split.n_validation"] >= values["data.n_sites"]:
        raise ConfigError("split.n_validation must leave at least one training site")
    for level in values["assess.levels"]:
        if not 0 < level < 1:
            raise ConfigError("assess.levels entries must be in (0, 1)")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def stage_seed(master: int, rep: int, stage: str) -> int:
    ss = np.random.SeedSequence([master, rep, _STAGE_IDS[stage]])
    return int(ss.generate_state(1, np.uint64)[0])


class StageWriter:
    """Tracks files written by one stage so failures can mark them partial."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.entries: list[tuple[str, int]] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def add(self, name: str, rows: int) -> None:
        self.entries.append((name, rows))

    def mark_partial(self) -> None:
        for name, _ in self.entries:
            target = self.out_dir / name
            if target.exists():
                target.rename(target.with_name(target.name + ".partial"))

    def update_manifest(self) -> None:
        manifest = self.out_dir / "manifest.txt"
        existing: dict[str, int] = {}
        if manifest.exists():
            for line in manifest.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    name, _, rows = line.rpartition(",")
                    existing[name] = int(rows)
        for name, rows in self.entries:
            existing[name] = rows
        lines = [f"{name},{rows}" for name, rows in sorted(existing.items())]
        manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_lines(writer: StageWriter, name: str, lines: list[str], rows: int | None = None) -> None:
    writer.path(name).write_text("\n".join(lines) + "\n", encoding="utf-8")
    writer.add(name, rows if rows is not None else len(lines))


def _write_config_resolved(cfg: RunConfig, writer: StageWriter) -> None:
    lines = [f"{key}={_fmt(cfg.values[key])}" for key in sorted(cfg.values)]
    _write_lines(writer, "config_resolved.txt", lines)


def _write_truth(truth: sampling.SyntheticTruth, writer: StageWriter) -> None:
    lines = ["row,name,value,u,z,t,p"]
    for j, b in enumerate(truth.beta):
        lines.append(f"param,beta{j},{repr(float(b))},,,,")
    for name in ("sigma2", "tau2", "phi", "kappa"):
        lines.append(f"param,{name},{repr(float(getattr(truth, name)))},,,,")
    for i, sid in enumerate(truth.site_ids):
        lines.append(
            f"site,{sid},,{repr(float(truth.u[i]))},{repr(float(truth.z[i]))},"
            f"{repr(float(truth.t[i]))},{repr(float(truth.p[i]))}"
        )
    _write_lines(writer, "truth.csv", lines, rows=len(lines) - 1)


def _write_matrix_csv(writer: StageWriter, name: str, header: list[str],
                      matrix: np.ndarray, integer: bool = False) -> None:
    lines = [",".join(header)]
    for i, row in enumerate(matrix, start=1):
        if integer:
            cells = [str(int(v)) for v in row]
        else:
            cells = [repr(float(v)) for v in row]
        lines.append(str(i) + "," + ",".join(cells))
    _write_lines(writer, name, lines, rows=matrix.shape[0])


def _read_matrix_csv(path: Path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split(",")[1:]
    rows = [[float(v) for v in line.split(",")[1:]] for line in lines[1:] if line.strip()]
    return header, np.asarray(rows, dtype=float)


# -- stages -------------------------------------------------------------------

def stage_simulate(cfg: RunConfig, out_dir: Path, rep: int) -> None:
    writer = StageWriter(out_dir)
    try:
        seed = stage_seed(cfg["seed"], rep, "simulate")
        dataset, rasters, truth = sampling.generate_synthetic_dataset(
            cfg.synthetic_config(seed)
        )
        rows = write_dataset(dataset, writer.path("dataset.csv"))
        writer.add("dataset.csv", rows)
        _write_truth(truth, writer)
        if rasters:
            grid = rasters["grid"]
            for name in ("elevation", "vegetation"):
                rows = predict_mod.write_ascii_grid(
                    writer.path(f"{name}.asc"), rasters[name],
                    xllcorner=grid.xmin, yllcorner=grid.ymin, cellsize=grid.cell_dx,
                )
                writer.add(f"{name}.asc", rows)
        _write_config_resolved(cfg, writer)
        log.info("simulated %d sites into %s", len(dataset), out_dir)
    except Exception:
        writer.mark_partial()
        raise
    writer.update_manifest()


def _select_training(cfg: RunConfig, pool: SpatialDataset, rng) -> list:
    n_train = cfg["split.n_train"]
    if n_train > len(pool):
        raise ConfigError(
            f"split.n_train={n_train} exceeds the {len(pool)} available sites"
        )
    if n_train == len(pool):
        return list(pool.ids)
    if cfg["split.method"] == "random":
        return sampling.random_subsample(pool, n_train, rng)
    strata = sampling.make_strata(pool, cfg["split.strata_k"], rng)
    return sampling.stratified_subsample(pool, strata, n_train)


def stage_subsample(cfg: RunConfig, out_dir: Path, rep: int) -> None:
    writer = StageWriter(out_dir)
    try:
        dataset = load_dataset(out_dir / "dataset.csv")
        rng = np.random.default_rng(stage_seed(cfg["seed"], rep, "subsample"))
        validation_ids = sampling.random_subsample(dataset, cfg["split.n_validation"], rng)
        pool = dataset.subset([i for i in dataset.ids if i not in set(validation_ids)])
        train_ids = _select_training(cfg, pool, rng)
        spec = SplitSpec(tuple(train_ids), tuple(validation_ids))
        rows = write_split(spec, writer.path("split.txt"))
        writer.add("split.txt", rows)
        log.info("split: %d train, %d validation", len(train_ids), len(validation_ids))
    except Exception:
        writer.mark_partial()
        raise
    writer.update_manifest()


def _load_train_validation(cfg: RunConfig, out_dir: Path):
    dataset = load_dataset(out_dir / "dataset.csv")
    spec = load_split(out_dir / "split.txt")
    return split_train_validation(dataset, spec)


def stage_fit(cfg: RunConfig, out_dir: Path, rep: int) -> None:
    writer = StageWriter(out_dir)
    try:
        train, _ = _load_train_validation(cfg, out_dir)
        X = build_design_matrix(train, cfg.design_constants())
        prior = cfg.prior_spec()
        n_chains = cfg["mcmc.chains"]
        for chain_idx in range(1, n_chains + 1):
            seed = stage_seed(cfg["seed"], rep, "fit") + chain_idx - 1
            config = cfg.mcmc_config(seed)

            def report(i, total):
                log.info("chain %d iteration %d/%d", chain_idx, i, total)

            chain = mcmc_mod.run_chain(
                train, X, prior, config, kappa=cfg["model.kappa"], progress=report
            )
            suffix = "" if chain_idx == 1 else f"_{chain_idx}"
            rows = mcmc_mod.write_chain(chain, writer.path(f"chain{suffix}.csv"))
            writer.add(f"chain{suffix}.csv", rows)
            rows = mcmc_mod.write_chain_diagnostics(
                chain, writer.path(f"chain_diagnostics{suffix}.csv")
            )
            writer.add(f"chain_diagnostics{suffix}.csv", rows)
            log.info(
                "chain %d acceptance: %s", chain_idx,
                {k: round(v, 3) for k, v in chain.accept_rates.items()},
            )
    except Exception:
        writer.mark_partial()
        raise
    writer.update_manifest()


def stage_glm(cfg: RunConfig, out_dir: Path, rep: int) -> None:
    writer = StageWriter(out_dir)
    try:
        train, validation = _load_train_validation(cfg, out_dir)
        constants = cfg.design_constants()
        X_train = build_design_matrix(train, constants)
        X_valid = build_design_matrix(validation, constants)
        fit = glm_mod.irls_fit(X_train, train.y_hardwood, train.n_total)
        lines = ["field,value"]
        lines.append(f"converged,{int(fit.converged)}")
        lines.append(f"iterations,{fit.iterations}")
        lines.append(f"deviance,{repr(fit.deviance)}")
        if fit.message:
            lines.append(f"message,{fit.message}")
        se = np.sqrt(np.maximum(np.diag(fit.cov_hat), 0.0))
        for j, b in enumerate(fit.beta_hat):
            lines.append(f"beta{j},{repr(float(b))}")
            lines.append(f"beta{j}_se,{repr(float(se[j]))}")
        _write_lines(writer, "glm_fit.csv", lines, rows=len(lines) - 1)
        if not fit.converged:
            raise BglgmError(f"GLM fit failed: {fit.message}")
        probs = glm_mod.glm_predict_probs(fit, X_valid)
        prob_lines = ["site_id,p_hat"]
        prob_lines += [
            f"{sid},{repr(float(p))}" for sid, p in zip(validation.ids, probs)
        ]
        _write_lines(writer, "glm_probs.csv", prob_lines, rows=len(probs))
        counts = glm_mod.glm_parametric_counts(
            probs, validation.n_total, cfg["glm.draws"],
            stage_seed(cfg["seed"], rep, "glm"),
        )
        _write_matrix_csv(
            writer, "glm_counts.csv", ["draw", *validation.ids], counts, integer=True
        )
        log.info("GLM fitted in %d iterations, deviance %.3f", fit.iterations, fit.deviance)
    except Exception:
        writer.mark_partial()
        raise
    writer.update_manifest()


def stage_predict(cfg: RunConfig, out_dir: Path, rep: int) -> None:
    writer = StageWriter(out_dir)
    try:
        train, validation = _load_train_validation(cfg, out_dir)
        constants = cfg.design_constants()
        X_train = build_design_matrix(train, constants)
        X_valid = build_design_matrix(validation, constants)
        chain = mcmc_mod.read_chain(out_dir / "chain.csv", kappa=cfg["model.kappa"])
        seed = stage_seed(cfg["seed"], rep, "predict")
        preds = predict_mod.predict_sites(chain, train, X_train, validation, X_valid, seed)
        _write_matrix_csv(
            writer, "site_probs.csv", ["draw", *validation.ids], preds.probs
        )
        counts = predict_mod.draw_counts(preds, validation.n_total, seed + 1)
        _write_matrix_csv(
            writer, "site_counts.csv", ["draw", *validation.ids], counts, integer=True
        )
        if preds.skipped_draws:
            log.warning("prediction skipped %d singular draws", preds.skipped_draws)
        if cfg["predict.grid"]:
            elev, header = predict_mod.read_ascii_grid(out_dir / "elevation.asc")
            veg, _ = predict_mod.read_ascii_grid(out_dir / "vegetation.asc")
            grid = predict_mod.grid_from_header(header)
            grid_preds, mean_raster = predict_mod.predict_grid(
                chain, train, X_train,
                {"elevation": elev, "vegetation": veg}, grid,
                draw_subsample=cfg["predict.draw_subsample"], seed=seed + 2,
                design_constants=constants,
            )
            rows = predict_mod.write_ascii_grid(
                writer.path("mean_raster.asc"), mean_raster,
                xllcorner=grid.xmin, yllcorner=grid.ymin, cellsize=grid.cell_dx,
            )
            writer.add("mean_raster.asc", rows)
            n_samples = min(cfg["predict.sample_rasters"], grid_preds.n_draws)
            for k in range(n_samples):
                raster = grid_preds.probs[k].reshape(grid.ny, grid.nx)
                name = f"sample_raster_{k + 1}.asc"
                rows = predict_mod.write_ascii_grid(
                    writer.path(name), raster,
                    xllcorner=grid.xmin, yllcorner=grid.ymin, cellsize=grid.cell_dx,
                )
                writer.add(name, rows)
        log.info("predicted %d validation sites over %d draws",
                 len(validation), preds.n_draws)
    except Exception:
        writer.mark_partial()
        raise
    writer.update_manifest()


def stage_assess(cfg: RunConfig, out_dir: Path, rep: int) -> None:
    writer = StageWriter(out_dir)
    try:
        _, validation = _load_train_validation(cfg, out_dir)
        truths = validation.y_hardwood
        observed_props = truths / validation.n_total
        site_ids = list(validation.ids)

        _, bglgm_counts = _read_matrix_csv(out_dir / "site_counts.csv")
        _, bglgm_probs = _read_matrix_csv(out_dir / "site_probs.csv")
        _, glm_counts = _read_matrix_csv(out_dir / "glm_counts.csv")
        glm_prob_lines = (out_dir / "glm_probs.csv").read_text(encoding="utf-8").splitlines()
        glm_probs = np.array([float(l.split(",")[1]) for l in glm_prob_lines[1:] if l.strip()])

        models = {
            "bglgm": (bglgm_counts, bglgm_probs.mean(axis=0)),
            "glm": (glm_counts, glm_probs),
        }
        levels = cfg["assess.levels"]
        header = ("row_type,model,site_id,level,truth,lo,hi,hit,"
                  "coverage,mean_width,rmse,total_truth,total_lo,total_hi,total_hit")
        lines = [header]
        for model_name, (counts, p_hat) in models.items():
            for level in levels:
                hits = 0
                width_sum = 0.0
                for j, sid in enumerate(site_ids):
                    lo, hi = assess_mod.narrowest_credible_interval(counts[:, j], level)
                    hit = int(lo <= truths[j] <= hi)
                    hits += hit
                    width_sum += hi - lo
                    lines.append(
                        f"site,{model_name},{sid},{repr(level)},{truths[j]},"
                        f"{repr(lo)},{repr(hi)},{hit},,,,,,,"
                    )
                coverage = hits / len(site_ids)
                mean_width = width_sum / len(site_ids)
                lines.append(
                    f"aggregate,{model_name},,{repr(level)},,,,,"
                    f"{repr(coverage)},{repr(mean_width)},,,,,"
                )
            rmse = assess_mod.rmse_probs(p_hat, observed_props)
            summary = assess_mod.total_count_summary(counts, truths, level=0.95)
            lines.append(
                f"summary,{model_name},,0.95,,,,,,,{repr(rmse)},"
                f"{repr(float(truths.sum()))},{repr(summary.interval[0])},"
                f"{repr(summary.interval[1])},{int(summary.covered)}"
            )
            totals_name = f"totals_{model_name}.csv"
            total_lines = ["total"] + [str(int(v)) for v in summary.totals]
            _write_lines(writer, totals_name, total_lines, rows=len(summary.totals))
        _write_lines(writer, "assessment.csv", lines, rows=len(lines) - 1)
        log.info("assessment written for %d sites", len(site_ids))
    except Exception:
        writer.mark_partial()
        raise
    writer.update_manifest()


_STAGES = {
    "simulate": stage_simulate,
    "subsample": stage_subsample,
    "fit": stage_fit,
    "glm": stage_glm,
    "predict": stage_predict,
    "assess": stage_assess,
}

_PIPELINE_ORDER = ("simulate", "subsample", "glm", "fit", "predict", "assess")


def _setup_logging(out_dir: Path) -> None:
    root = logging.getLogger("bglgm")
    root.setLevel(logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)
    file_handler = logging.FileHandler(out_dir / "run.log", encoding="utf-8")
    file_handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    )
    root.addHandler(file_handler)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING)
    root.addHandler(console)


def _rep_dirs(cfg: RunConfig, out_dir: Path) -> list[tuple[int, Path]]:
    reps = cfg["replications"]
    if reps == 1:
        return [(1, out_dir)]
    return [(r, out_dir / f"rep_{r:03d}") for r in range(1, reps + 1)]


def run_command(argv) -> int:
    parser = argparse.ArgumentParser(
        prog="bglgm",
        description="Spatial binomial modelling workflow (simulate, fit, predict, assess).",
    )
    parser.add_argument("command", choices=[*_STAGES, "pipeline"])
    parser.add_argument("--config", type=Path, default=None, help="key=value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=Path, default=Path("bglgm_out"), help="output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.values["seed"] = args.seed
        out_dir = args.out
        out_dir.mkdir(parents=True, exist_ok=True)
        _setup_logging(out_dir)
        for rep, rep_dir in _rep_dirs(cfg, out_dir):
            rep_dir.mkdir(parents=True, exist_ok=True)
            if args.command == "pipeline":
                for stage in _PIPELINE_ORDER:
                    _STAGES[stage](cfg, rep_dir, rep)
            else:
                _STAGES[args.command](cfg, rep_dir, rep)
        return 0
    except BglgmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # stage failures must exit nonzero, not crash
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
