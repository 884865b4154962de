"""Command-line interface.

Subcommands mirror the pipeline stages::

    twinpix simulate  --config run.ini --plane near --out near.bpi1
    twinpix correlate --config run.ini --stack near.bpi1 --out-prefix out/near
    twinpix report    --config run.ini --nf out/near_corr.f64 --ff out/far_corr.f64 --out out/report.json
    twinpix pipeline  --config run.ini --out out/

`report` (and `pipeline`) exit 0 when the Heisenberg bound is violated,
1 when it is not, and 2 on any error, so sweeps can gate on the verdict.
The worker count changes wall time only, never any output byte.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .config import RunConfig, load_config
from .correlator import EstimatorError, MaskError, build_mask, intercorrelation, \
    witness
from .peakfit import FitWindowError, NoPeakError, auto_window, fit_gaussian
from .pipeline import PipelineError, run_pipeline, simulate_to_file, \
    witness_stats, write_corrmap_set
from .report import build_report
from .source import ConfigError, Plane
from .stackio import FormatError, read_corrmap_bin, read_corrmap_csv, \
    read_mask_csv, read_stack

OUT_ENV = "TWINPIX_OUT"
_USER_ERRORS = (ConfigError, FormatError, EstimatorError, MaskError,
                NoPeakError, FitWindowError, PipelineError)


def _load(config_path: str, seed: int | None) -> RunConfig:
    config = load_config(config_path)
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    return config


def _out_dir(out: str | None) -> Path:
    import os
    base = out or os.environ.get(OUT_ENV) or "."
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fail(exc: Exception):
    click.echo(f"error: {exc}", err=True)
    sys.exit(2)


@click.group()
def main():
    """Photon-counting pair-correlation simulator and analysis pipeline."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--plane", type=click.Choice(["near", "far"]), required=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--workers", type=int, default=1, show_default=True)
def simulate(config_path, plane, out, seed, workers):
    """Simulate one plane's frame stack into a BPI1 container."""
    try:
        config = _load(config_path, seed)
        path = simulate_to_file(config, Plane.NEAR if plane == "near" else Plane.FAR,
                                out, workers=workers)
    except _USER_ERRORS as exc:
        _fail(exc)
    click.echo(f"wrote {path} ({config.n_frames} frames)")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--stack", "stack_path", required=True, type=click.Path(exists=True))
@click.option("--out-prefix", required=True, type=click.Path())
@click.option("--figures/--no-figures", default=True, show_default=True)
def correlate(config_path, stack_path, out_prefix, figures):
    """Correlation and witness maps (CSV + binary + mask) for one stack."""
    try:
        config = _load(config_path, None)
        stack = read_stack(stack_path)
        rois = config.rois_for(stack.plane)
        cmap = intercorrelation(stack, rois)
        cmap = build_mask(cmap, rois, smear_axis=config.analysis.smear_axis,
                          mask_radius=config.analysis.mask_radius,
                          fit_halfwidth=config.analysis.fit_window // 2)
        wit = witness(stack, rois)
        prefix = Path(out_prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        paths = write_corrmap_set(cmap, wit, prefix)
        if figures:
            from . import plots
            paths.append(plots.save_corrmap_figure(cmap, prefix.parent / (prefix.name + ".png"),
                                                   f"{Plane(stack.plane).name.lower()} intercorrelation"))
            paths.append(plots.save_corrmap_figure(wit, prefix.parent / (prefix.name + "_witness.png"),
                                                   "witness"))
    except _USER_ERRORS as exc:
        _fail(exc)
    stats = witness_stats(wit)
    click.echo(f"witness max|F| = {stats['max_abs']:.3e} "
               f"({stats['max_abs_over_std']:.2f} sigma)")
    for p in paths:
        click.echo(f"wrote {p}")


def _read_map(path: str):
    path = Path(path)
    cmap = read_corrmap_csv(path) if path.suffix == ".csv" else read_corrmap_bin(path)
    mask_path = path.parent / (path.stem + "_mask.csv")
    if mask_path.exists():
        cmap.mask = read_mask_csv(mask_path)
    return cmap


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--nf", "nf_path", required=True, type=click.Path(exists=True),
              help="Near-field correlation map (.f64 or .csv).")
@click.option("--ff", "ff_path", required=True, type=click.Path(exists=True),
              help="Far-field correlation map (.f64 or .csv).")
@click.option("--out", required=True, type=click.Path())
@click.option("--figures/--no-figures", default=True, show_default=True)
def report(config_path, nf_path, ff_path, out, figures):
    """Fit both maps and write the violation report (exit 0/1 by verdict)."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        config = _load(config_path, None)
        nf_map = _read_map(nf_path)
        ff_map = _read_map(ff_path)
        size = config.analysis.fit_window
        fits = {}
        for label, cmap in (("near", nf_map), ("far", ff_map)):
            try:
                fits[label] = fit_gaussian(cmap, window=auto_window(cmap, size),
                                           significance=config.analysis.significance)
            except (NoPeakError, FitWindowError) as exc:
                out.write_text(json.dumps({
                    "error": f"{label}-field fit failed: {exc}",
                    "partial": {k: f.to_dict() for k, f in fits.items()},
                }, indent=2, sort_keys=True) + "\n")
                raise
        result = build_report(fits["near"], fits["far"], config.geometry,
                              pixel_variance=config.analysis.pixel_variance,
                              n_frames_nf=nf_map.n_frames, n_frames_ff=ff_map.n_frames)
        doc = result.to_dict()
        out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        out.with_suffix(".txt").write_text(result.summary() + "\n")
        if figures:
            from . import plots
            plots.save_report_figure(result, out.parent / (out.stem + "_products.png"))
            plots.save_fit_figure(nf_map, fits["near"], out.parent / (out.stem + "_near_fit.png"))
            plots.save_fit_figure(ff_map, fits["far"], out.parent / (out.stem + "_far_fit.png"))
    except _USER_ERRORS as exc:
        _fail(exc)
    click.echo(result.summary())
    sys.exit(0 if result.verdict else 1)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", default=None, type=click.Path(),
              help=f"Output directory (default: ${OUT_ENV} or '.').")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--bootstrap/--no-bootstrap", default=True, show_default=True)
def pipeline(config_path, out, seed, workers, figures, bootstrap):
    """Simulate both planes, correlate, fit, and report into one directory."""
    try:
        config = _load(config_path, seed)
        manifest = run_pipeline(config, _out_dir(out), workers=workers,
                                figures=figures, with_bootstrap=bootstrap)
    except _USER_ERRORS as exc:
        _fail(exc)
    click.echo(f"pipeline complete: verdict = {manifest['verdict']}, "
               f"{len(manifest['outputs'])} artifacts")
    sys.exit(0 if manifest["verdict"] else 1)


if __name__ == "__main__":
    main()
