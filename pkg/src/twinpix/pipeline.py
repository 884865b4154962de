"""Stage orchestration: simulate, correlate, fit, report, manifest.

Frames are embarrassingly parallel: frame i depends only on (seed, plane,
i), so the worker count changes wall time but never a single output byte.
Every artifact lands in the output directory and is listed with its SHA-256
in manifest.json (no timestamps anywhere, so reruns are byte-identical).
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rng_streams
from .config import RunConfig
from .correlator import CorrMap, RoiPair, build_mask, intercorrelation, \
    variance_of_difference, witness
from .detector import FrameStack, check_fluence, rasterize
from .peakfit import GaussFit, NoPeakError, auto_window, fit_gaussian
from .report import AnalysisOptions, bootstrap_errors, build_report
from .source import Plane, sample_frame
from .stackio import StackWriter, write_corrmap_bin, write_corrmap_csv, \
    write_mask_csv, write_stack


class PipelineError(RuntimeError):
    """A stage failed; the message carries the stage name."""


def _source_tag(plane: Plane) -> int:
    return rng_streams.SOURCE_STREAM + int(plane)


def _detector_tag(plane: Plane) -> int:
    return rng_streams.DETECTOR_STREAM + int(plane)


def simulate_frame_bits(config: RunConfig, plane: Plane, index: int) -> np.ndarray:
    """One binary frame, reproducible from (seed, plane, index) alone."""
    params = config.source_for(plane)
    events = sample_frame(params, plane,
                          rng_streams.stream(config.seed, _source_tag(plane), index))
    frame = rasterize(events, config.detector,
                      rng_streams.stream(config.seed, _detector_tag(plane), index),
                      frame_index=index)
    return frame.bits


def simulate_stack(config: RunConfig, plane: Plane, workers: int = 1) -> FrameStack:
    """Simulate the full stack for one plane (in memory, bit-packed)."""
    plane = Plane(plane)
    n = config.n_frames
    h, w = config.geometry.sensor_height, config.geometry.sensor_width
    packed = np.zeros((n, h, (w + 7) // 8), dtype=np.uint8)

    def fill(i: int) -> None:
        packed[i] = np.packbits(simulate_frame_bits(config, plane, i), axis=-1)

    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(n)))
    else:
        for i in range(n):
            fill(i)
    return FrameStack(plane=plane, width=w, height=h, seed=config.seed, packed=packed)


def simulate_to_file(config: RunConfig, plane: Plane, path, workers: int = 1) -> Path:
    """Simulate one plane straight to a BPI1 container (streaming, constant memory)."""
    plane = Plane(plane)
    h, w = config.geometry.sensor_height, config.geometry.sensor_width
    chunk = 64
    with StackWriter(path, plane, w, h, config.seed) as writer:
        for lo in range(0, config.n_frames, chunk):
            indices = range(lo, min(lo + chunk, config.n_frames))
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    frames = list(pool.map(
                        lambda i: simulate_frame_bits(config, plane, i), indices))
            else:
                frames = [simulate_frame_bits(config, plane, i) for i in indices]
            for bits in frames:
                writer.write_bits(bits)
    return Path(path)


# ---------------------------------------------------------------------------
# Analysis stages
# ---------------------------------------------------------------------------
@dataclass
class PlaneAnalysis:
    plane: Plane
    cmap: CorrMap
    witness_map: CorrMap
    fit: GaussFit
    fluence: float
    fluence_ok: bool


def analyze_stack(stack: FrameStack, rois: RoiPair, options: AnalysisOptions) -> PlaneAnalysis:
    """Correlate one stack, mask artifacts, and fit the peak."""
    cmap = intercorrelation(stack, rois)
    cmap = build_mask(cmap, rois, smear_axis=options.smear_axis,
                      mask_radius=options.mask_radius,
                      fit_halfwidth=options.fit_window // 2)
    wit = witness(stack, rois)
    fit = fit_gaussian(cmap, window=auto_window(cmap, options.fit_window),
                       significance=options.significance)
    flu = check_fluence(stack, roi=rois.roi1)
    return PlaneAnalysis(plane=Plane(stack.plane), cmap=cmap, witness_map=wit,
                         fit=fit, fluence=flu.value, fluence_ok=flu.in_regime)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_corrmap_set(cmap: CorrMap, wit: CorrMap, out_prefix: Path) -> list[Path]:
    """CSV + binary for the map and its witness, plus the mask CSV."""
    paths = [
        write_corrmap_csv(cmap, out_prefix.with_suffix(".csv")),
        write_corrmap_bin(cmap, out_prefix.with_suffix(".f64")),
        write_mask_csv(cmap, Path(str(out_prefix) + "_mask.csv")),
        write_corrmap_csv(wit, Path(str(out_prefix) + "_witness.csv")),
        write_corrmap_bin(wit, Path(str(out_prefix) + "_witness.f64")),
    ]
    return paths


def witness_stats(wit: CorrMap) -> dict:
    vals = wit.values[~wit.mask]
    std = float(vals.std())
    peak = float(np.abs(vals).max())
    return {"max_abs": peak, "std": std, "max_abs_over_std": peak / std if std else float("inf")}


def run_pipeline(config: RunConfig, out_dir, workers: int = 1,
                 figures: bool = True, with_bootstrap: bool = True) -> dict:
    """Simulate both planes, analyze, and report; returns the manifest dict.

    Artifacts: near.bpi1/far.bpi1 stacks, correlation + witness maps in CSV
    and binary form with masks, report.json, report.txt, figures (unless
    disabled), and manifest.json listing every output with its SHA-256.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.validate()
    if config.n_frames == 0:
        raise PipelineError("stage simulate: cannot run the pipeline with n_frames = 0")

    outputs: list[Path] = []
    analyses: dict[Plane, PlaneAnalysis] = {}
    stacks: dict[Plane, FrameStack] = {}
    diagnostics: dict = {}

    for plane, name in ((Plane.NEAR, "near"), (Plane.FAR, "far")):
        try:
            stack = simulate_stack(config, plane, workers=workers)
            outputs.append(write_stack(stack, out / f"{name}.bpi1"))
            stacks[plane] = stack
        except Exception as exc:
            raise PipelineError(f"stage simulate[{name}]: {exc}") from exc
        try:
            analysis = analyze_stack(stack, config.rois_for(plane), config.analysis)
            analyses[plane] = analysis
            outputs.extend(write_corrmap_set(analysis.cmap, analysis.witness_map,
                                             out / f"{name}_corr"))
            diagnostics[f"{name}_witness"] = witness_stats(analysis.witness_map)
            diagnostics[f"{name}_fluence"] = {"value": analysis.fluence,
                                              "in_regime": analysis.fluence_ok}
        except NoPeakError as exc:
            raise PipelineError(f"stage correlate[{name}]: no peak: {exc}") from exc
        except Exception as exc:
            raise PipelineError(f"stage correlate[{name}]: {exc}") from exc

    try:
        vod = variance_of_difference(stacks[Plane.FAR], config.rois_ff,
                                     bin=config.analysis.bin_size)
        diagnostics["far_variance_of_difference"] = vod
    except Exception as exc:
        raise PipelineError(f"stage variance[far]: {exc}") from exc

    boot = None
    if with_bootstrap:
        try:
            boot = bootstrap_errors(stacks[Plane.NEAR], stacks[Plane.FAR],
                                    config.rois_nf, config.rois_ff, config.geometry,
                                    n_resamples=config.analysis.n_resamples,
                                    seed=config.seed, options=config.analysis)
        except Exception as exc:
            raise PipelineError(f"stage bootstrap: {exc}") from exc

    try:
        report = build_report(
            analyses[Plane.NEAR].fit, analyses[Plane.FAR].fit, config.geometry,
            bootstrap=boot,
            pixel_variance=config.analysis.pixel_variance,
            fluence_nf=analyses[Plane.NEAR].fluence,
            fluence_ff=analyses[Plane.FAR].fluence,
            n_frames_nf=config.n_frames, n_frames_ff=config.n_frames,
        )
    except Exception as exc:
        raise PipelineError(f"stage report: {exc}") from exc

    doc = report.to_dict()
    doc["diagnostics"] = diagnostics
    if boot is not None:
        doc["bootstrap"] = boot.to_dict()
    report_path = out / "report.json"
    report_path.write_text(_json_dumps(doc))
    outputs.append(report_path)
    text_path = out / "report.txt"
    text_path.write_text(report.summary() + "\n")
    outputs.append(text_path)

    if figures:
        try:
            from . import plots
            for plane, name in ((Plane.NEAR, "near"), (Plane.FAR, "far")):
                a = analyses[plane]
                outputs.append(plots.save_corrmap_figure(
                    a.cmap, out / f"{name}_corr.png", f"{name} field intercorrelation"))
                outputs.append(plots.save_corrmap_figure(
                    a.witness_map, out / f"{name}_witness.png", f"{name} field witness"))
                outputs.append(plots.save_fit_figure(
                    a.cmap, a.fit, out / f"{name}_fit.png", f"{name} field peak fit"))
            outputs.append(plots.save_report_figure(report, out / "report_products.png"))
        except Exception as exc:
            raise PipelineError(f"stage figures: {exc}") from exc

    manifest = {
        "seed": config.seed,
        "n_frames": config.n_frames,
        "verdict": report.verdict,
        "outputs": [
            {"path": p.name, "bytes": p.stat().st_size, "sha256": _sha256(p)}
            for p in outputs
        ],
    }
    (out / "manifest.json").write_text(_json_dumps(manifest))
    return manifest
