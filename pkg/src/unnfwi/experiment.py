"""End-to-end runs: phantom, fine-grid data, coarse-grid inversion, artifacts."""

from __future__ import annotations

import configparser
import csv
import hashlib
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as uio
from .config import InversionConfig, validate
from .errors import ConfigError
from .gradient import update_mask
from .inversion import Problem, ReconstructionResult, run_method
from .metrics import PSNR_CAP, MetricsReport, compute_metrics
from .model import AcquisitionGeometry, SoundSpeedField, build_ring_geometry, ricker_wavelet
from .phantoms import (
    make_breast_phantom,
    make_bump_phantom,
    make_disk_phantom,
    make_phantom_analog,
    resample_field,
)
from .wave import resample_gathers, simulate_survey

log = logging.getLogger(__name__)

CACHE_ENV = "UNNFWI_CACHE"


def cache_dir() -> Path | None:
    """Directory for cached observed data; caching is off when the variable is empty."""
    raw = os.environ.get(CACHE_ENV)
    if raw is None:
        return Path.home() / ".cache" / "unnfwi"
    return Path(raw) if raw else None


# ---------------------------------------------------------------------------
# setup


def make_truth(cfg: InversionConfig) -> SoundSpeedField:
    """True model on the fine (data-generating) grid."""
    ph = cfg.phantom
    grid = cfg.fine_grid()
    if ph.kind == "breast":
        return make_breast_phantom(grid, cfg.seeds.phantom, ph.radius, ph.skin, ph.fat_sigma, tuple(ph.gland_axes))
    if ph.kind == "bump":
        return make_bump_phantom(grid, ph.amplitude, ph.width)
    if ph.kind == "phantom-analog":
        return make_phantom_analog(grid, ph.radius)
    if ph.kind == "disk":
        return make_disk_phantom(grid, ph.radius if ph.radius is not None else 0.2 * min(grid.extent), ph.speed)
    field = uio.read_field(cfg.phantom_path())
    return resample_field(field, grid)


def make_geometry(cfg: InversionConfig) -> AcquisitionGeometry:
    geo = cfg.geometry
    coarse = cfg.coarse_grid()
    geom = build_ring_geometry(geo.n_transducers, geo.n_emitters, geo.ring_radius, coarse.center, coarse,
                               sponge_width=cfg.grid.sponge_width, exclude_nearest=geo.exclude_nearest)
    geom.check_fits(cfg.fine_grid(), cfg.fine_sim().sponge_width)
    return geom


def simulate_observed(cfg: InversionConfig, truth_fine: SoundSpeedField, geom: AcquisitionGeometry):
    """Fine-grid survey resampled to the coarse time axis and rounded to float32.

    The rounding makes cached and freshly simulated data identical.
    """
    fine = cfg.fine_sim()
    coarse = cfg.coarse_sim()
    wav = ricker_wavelet(cfg.wavelet.f_peak, fine.dt, fine.nt)
    raw = simulate_survey(truth_fine, geom, wav, fine)
    out = resample_gathers(raw, coarse.dt, coarse.nt)
    return [g.with_traces(g.traces.astype(np.float32).astype(np.float64)) for g in out]


def observed_data(cfg: InversionConfig, truth_fine: SoundSpeedField, geom: AcquisitionGeometry):
    """Observed gathers, read from the cache when an entry for this data key exists."""
    root = cache_dir()
    path = root / f"obs-{cfg.data_key()[:32]}.usgt" if root is not None else None
    if path is not None and path.exists():
        try:
            log.info("observed data from cache %s", path)
            return uio.read_gathers(path)
        except ValueError as exc:
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)
    obs = simulate_observed(cfg, truth_fine, geom)
    if path is not None:
        try:
            uio.write_gathers(path, obs)
        except OSError as exc:
            log.warning("could not write cache entry %s: %s", path, exc)
    return obs


@dataclass
class Setup:
    cfg: InversionConfig
    truth_fine: SoundSpeedField
    truth: SoundSpeedField  # on the inversion grid
    geom: AcquisitionGeometry
    obs: list
    problem: Problem


def build_setup(cfg: InversionConfig) -> Setup:
    validate(cfg)
    truth_fine = make_truth(cfg)
    geom = make_geometry(cfg)
    obs = observed_data(cfg, truth_fine, geom)
    coarse = cfg.coarse_grid()
    sim = cfg.coarse_sim()
    wav = ricker_wavelet(cfg.wavelet.f_peak, sim.dt, sim.nt)
    band = cfg.band()
    c_init = SoundSpeedField.homogeneous(coarse, cfg.inversion.c_init)
    mask = update_mask(coarse, geom, sim.sponge_width, ring_interior=cfg.inversion.ring_interior)
    problem = Problem(geom, wav, sim, obs, c_init, band, mask)
    truth = resample_field(truth_fine, coarse)
    return Setup(cfg, truth_fine, truth, geom, obs, problem)


# ---------------------------------------------------------------------------
# metrics and artifacts


def field_metrics(recon: SoundSpeedField, truth: SoundSpeedField, cfg: InversionConfig) -> dict[str, MetricsReport]:
    """Both metric modes; image mode uses band-normalised fields."""
    band = cfg.band()
    return {
        "image": compute_metrics(band.normalize(recon.c), band.normalize(truth.c), "image"),
        "speed": compute_metrics(recon.c, truth.c, "speed", data_range=band.width),
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt_metric(v: float) -> str:
    return repr(min(float(v), PSNR_CAP))


def write_loss_csv(path: Path, result: ReconstructionResult) -> None:
    """Columns: iteration, stage, cutoff [Hz, 0 = unfiltered], loss.

    Holds only deterministic values, so reruns reproduce it byte for byte.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "stage", "cutoff", "loss"])
        for it, stage, cut, loss, _ in result.log_rows:
            w.writerow([it, stage, repr(float(cut)), repr(float(loss))])


def write_log_csv(path: Path, result: ReconstructionResult) -> None:
    """Per-iteration log with timing: iteration, stage, cutoff, loss, wall_ms."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "stage", "cutoff", "loss", "wall_ms"])
        for it, stage, cut, loss, ms in result.log_rows:
            w.writerow([it, stage, repr(float(cut)), repr(float(loss)), f"{ms:.3f}"])


def write_data_artifacts(setup: Setup, out: Path) -> dict[str, str]:
    out.mkdir(parents=True, exist_ok=True)
    uio.write_field(out / "truth.usfd", setup.truth)
    uio.write_field(out / "truth_fine.usfd", setup.truth_fine)
    uio.write_gathers(out / "obs.usgt", setup.obs)
    (out / "config.ini").write_text(setup.cfg.to_ini())
    return {"truth": "truth.usfd", "truth_fine": "truth_fine.usfd", "obs": "obs.usgt", "config": "config.ini"}


def write_manifest(path: Path, sections: dict[str, dict[str, str]]) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    for name, values in sections.items():
        cp[name] = values
    with open(path, "w") as fh:
        cp.write(fh)


def read_manifest(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None)
    if not cp.read(path):
        raise ValueError(f"cannot read manifest {path}")
    return {s: dict(cp[s]) for s in cp.sections()}


def run_single(setup: Setup, method: str, out: Path) -> Path:
    """Run one method and write its artifacts; returns the manifest path."""
    cfg = setup.cfg
    out.mkdir(parents=True, exist_ok=True)
    artifacts = write_data_artifacts(setup, out)
    result = run_method(method, setup.problem, cfg.options())
    uio.write_field(out / "final.usfd", result.field)
    artifacts["final"] = "final.usfd"
    write_loss_csv(out / "loss.csv", result)
    artifacts["loss"] = "loss.csv"
    write_log_csv(out / "log.csv", result)
    artifacts["log"] = "log.csv"
    if result.snapshots:
        (out / "snapshots").mkdir(exist_ok=True)
        for it, c in result.snapshots:
            name = f"snapshots/iter_{it:06d}.usfd"
            uio.write_field(out / name, result.field.with_values(c))
            artifacts[f"snapshot_{it:06d}"] = name
    if result.params is not None:
        from .net.unet import sample_noise

        noise = sample_noise(cfg.seeds.noise, cfg.grid.n_coarse, cfg.arch())
        uio.write_params(out / "checkpoint.usnn", result.params, noise.z)
        artifacts["checkpoint"] = "checkpoint.usnn"
    band = cfg.band()
    uio.write_pgm(out / "final.pgm", result.field.c, band.c_min, band.c_max)
    uio.write_pgm(out / "truth.pgm", setup.truth.c, band.c_min, band.c_max)
    uio.export_error_pgm(setup.truth, result.field, out / "error.pgm", half_range=0.5 * band.width)
    artifacts.update({"final_image": "final.pgm", "truth_image": "truth.pgm", "error_image": "error.pgm"})
    metrics = field_metrics(result.field, setup.truth, cfg)
    (out / "metrics.txt").write_text(format_metrics(metrics))
    artifacts["metrics"] = "metrics.txt"
    obs_energy = setup.problem.obs_energy
    sections = {
        "run": {
            "method": method,
            "config_hash": cfg.hash(),
            "data_key": cfg.data_key(),
            "truth_sha256": _sha256(out / "truth.usfd"),
            "iterations": str(len(result.loss_history)),
            "elapsed_s": f"{result.elapsed:.3f}",
            "final_loss": repr(float(result.loss_history[-1])) if len(result.loss_history) else "nan",
            "obs_energy": repr(obs_energy),
            "stage_starts": ", ".join(str(s) for s in result.stage_starts),
            "stage_cutoffs": ", ".join("none" if c is None else repr(float(c)) for c in result.stage_cutoffs),
        },
        "seeds": {"phantom": str(cfg.seeds.phantom), "noise": str(cfg.seeds.noise), "init": str(cfg.seeds.init)},
        "artifacts": artifacts,
    }
    for mode, rep in metrics.items():
        sections[f"metrics.{mode}"] = {k: _fmt_metric(v) for k, v in rep.as_dict().items()}
    path = out / "manifest.txt"
    write_manifest(path, sections)
    return path


def format_metrics(metrics: dict[str, MetricsReport]) -> str:
    lines = []
    for mode, rep in metrics.items():
        lines.append(f"[{mode}]")
        for k, v in rep.as_dict().items():
            lines.append(f"{k} = {_fmt_metric(v)}")
    return "\n".join(lines) + "\n"


def run_experiment(cfg: InversionConfig, out: Path | None = None) -> list[Path]:
    """Run every configured method; one sub-directory and manifest per method."""
    out = Path(out if out is not None else cfg.output.dir)
    setup = build_setup(cfg)
    return [run_single(setup, m, out / m) for m in cfg.inversion.method]


def simulate_only(cfg: InversionConfig, out: Path | None = None) -> Path:
    out = Path(out if out is not None else cfg.output.dir)
    setup = build_setup(cfg)
    artifacts = write_data_artifacts(setup, out)
    path = out / "manifest.txt"
    write_manifest(path, {
        "run": {"method": "simulate", "config_hash": cfg.hash(), "data_key": cfg.data_key(),
                "truth_sha256": _sha256(out / "truth.usfd"), "obs_energy": repr(setup.problem.obs_energy)},
        "seeds": {"phantom": str(cfg.seeds.phantom), "noise": str(cfg.seeds.noise), "init": str(cfg.seeds.init)},
        "artifacts": artifacts,
    })
    return path


# ---------------------------------------------------------------------------
# post-processing


def _manifest_field(manifest_path: Path, man: dict, key: str) -> SoundSpeedField:
    try:
        rel = man["artifacts"][key]
    except KeyError:
        raise ValueError(f"{manifest_path}: no '{key}' artifact") from None
    return uio.read_field(manifest_path.parent / rel)


def recompute_metrics(manifest_path) -> dict[str, MetricsReport]:
    """Metrics from the stored truth and final fields of a run."""
    manifest_path = Path(manifest_path)
    man = read_manifest(manifest_path)
    from .config import load_config

    cfg = load_config(manifest_path.parent / man["artifacts"]["config"])
    truth = _manifest_field(manifest_path, man, "truth")
    final = _manifest_field(manifest_path, man, "final")
    return field_metrics(final, truth, cfg)


COMPARE_COLUMNS = ("method", "ssim", "psnr", "rmse", "wall_s")


def compare_runs(manifest_paths, mode: str = "image") -> list[dict]:
    """One row per run with recomputed metrics; all runs must share the truth field."""
    paths = [Path(p) for p in manifest_paths]
    if not paths:
        raise ValueError("no manifests given")
    mans = [read_manifest(p) for p in paths]
    truths = {m["run"]["truth_sha256"] for m in mans}
    if len(truths) > 1:
        lines = [f"  {p}: config_hash={m['run'].get('config_hash')} truth={m['run']['truth_sha256'][:12]}"
                 for p, m in zip(paths, mans)]
        raise ConfigError("runs reference different truth fields:\n" + "\n".join(lines))
    rows = []
    for p, m in zip(paths, mans):
        rep = recompute_metrics(p)[mode]
        rows.append({"method": m["run"]["method"], "ssim": rep.ssim, "psnr": rep.psnr, "rmse": rep.rmse,
                     "wall_s": float(m["run"].get("elapsed_s", "nan"))})
    return rows


def format_table(rows: list[dict]) -> tuple[str, str]:
    """(CSV text, aligned text) for :func:`compare_runs` rows."""
    def cell(k, v):
        if k == "method":
            return str(v)
        if k == "psnr":
            return f"{min(v, PSNR_CAP):.2f}"
        if k == "wall_s":
            return f"{v:.1f}"
        return f"{v:.4f}"

    csv_lines = [",".join(COMPARE_COLUMNS)]
    csv_lines += [",".join(repr(r[k]) if k != "method" else r[k] for k in COMPARE_COLUMNS) for r in rows]
    table = [list(COMPARE_COLUMNS)] + [[cell(k, r[k]) for k in COMPARE_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(COMPARE_COLUMNS))]
    text = "\n".join("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
                     for row in table)
    return "\n".join(csv_lines) + "\n", text + "\n"
