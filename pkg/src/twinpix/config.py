"""Run configuration: one INI-style document drives a whole reproducible run.

Sections: [geometry], [source], [near], [far], [detector], [run], [analysis].
The source can be given either explicit conditional widths (nf_pair_sigma,
ff_sum_sigma) or a violation_target plus anisotropy, which is resolved to
widths on load.  Every value that the simulation or analysis consumes lives
here, so (config, seed) fully determines a bit-reproducible run.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .correlator import Rect, RoiPair
from .detector import DetectorParams
from .optics import GeometryError, OpticalGeometry
from .report import AnalysisOptions
from .source import (ConfigError, Plane, SourceParams, calibrate_to_violation)


@dataclass
class RunConfig:
    geometry: OpticalGeometry
    source: SourceParams            # beam centers as given for the near field
    detector: DetectorParams
    rois_nf: RoiPair
    rois_ff: RoiPair
    centers_nf: tuple[tuple[float, float], tuple[float, float]]
    centers_ff: tuple[tuple[float, float], tuple[float, float]]
    n_frames: int
    seed: int
    analysis: AnalysisOptions

    def source_for(self, plane: Plane) -> SourceParams:
        c1, c2 = self.centers_nf if Plane(plane) == Plane.NEAR else self.centers_ff
        return replace(self.source, beam_center_1=c1, beam_center_2=c2)

    def rois_for(self, plane: Plane) -> RoiPair:
        return self.rois_nf if Plane(plane) == Plane.NEAR else self.rois_ff

    def validate(self) -> None:
        for label, rois in (("near", self.rois_nf), ("far", self.rois_ff)):
            for name, roi in (("roi1", rois.roi1), ("roi2", rois.roi2)):
                if not roi.fits_in(self.geometry.sensor_width, self.geometry.sensor_height):
                    raise ConfigError(f"[{label}] {name} {roi!r} exceeds the sensor")
            b = self.analysis.bin_size
            if rois.roi1.w % b or rois.roi1.h % b:
                raise ConfigError(f"[analysis] bin_size={b} does not divide the [{label}] ROI "
                                  f"({rois.roi1.w}x{rois.roi1.h})")
        if self.n_frames < 0:
            raise ConfigError(f"[run] n_frames must be >= 0, got {self.n_frames}")
        if (self.detector.width, self.detector.height) != \
                (self.geometry.sensor_width, self.geometry.sensor_height):
            raise ConfigError("detector dimensions must match the sensor")


class _Section:
    """Typed access to one INI section with section.key diagnostics."""

    def __init__(self, parser: configparser.ConfigParser, name: str, path: str):
        if not parser.has_section(name):
            raise ConfigError(f"{path}: missing [{name}] section")
        self._sec = parser[name]
        self._name = name
        self._path = path

    def _raw(self, key: str, default=None, required=False):
        if key in self._sec:
            return self._sec[key]
        if required:
            raise ConfigError(f"{self._path}: [{self._name}] is missing '{key}'")
        return default

    def get_float(self, key: str, default=None, required=False):
        raw = self._raw(key, default=default, required=required)
        if raw is None or isinstance(raw, float):
            return raw
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{self._path}: [{self._name}] {key} = {raw!r} is not a number")

    def get_int(self, key: str, default=None, required=False):
        raw = self._raw(key, default=default, required=required)
        if raw is None or isinstance(raw, int):
            return raw
        try:
            return int(raw, 0) if isinstance(raw, str) else int(raw)
        except ValueError:
            raise ConfigError(f"{self._path}: [{self._name}] {key} = {raw!r} is not an integer")

    def get_pair(self, key: str, default=None, required=False):
        raw = self._raw(key, default=None, required=required)
        if raw is None:
            return default
        try:
            parts = [float(p) for p in raw.replace(",", " ").split()]
        except ValueError:
            parts = []
        if len(parts) != 2:
            raise ConfigError(f"{self._path}: [{self._name}] {key} = {raw!r} must be two numbers")
        return (parts[0], parts[1])

    def get_rect(self, key: str) -> Rect:
        raw = self._raw(key, required=True)
        try:
            x0, y0, w, h = (int(p) for p in raw.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"{self._path}: [{self._name}] {key} = {raw!r} must be 'x0, y0, w, h'")
        return Rect(x0, y0, w, h)

    def get_str(self, key: str, default=None):
        return self._raw(key, default=default)


def load_config(path) -> RunConfig:
    """Parse and validate a run configuration file."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return _build(parser, str(path))


def _build(parser: configparser.ConfigParser, path: str) -> RunConfig:
    geo = _Section(parser, "geometry", path)
    try:
        geometry = OpticalGeometry(
            pixel_pitch=geo.get_float("pixel_pitch_m", required=True),
            focal_length=geo.get_float("focal_length_m", required=True),
            wavelength=geo.get_float("wavelength_m", required=True),
            sensor_width=geo.get_int("sensor_width", required=True),
            sensor_height=geo.get_int("sensor_height", required=True),
        )
    except GeometryError as exc:
        raise ConfigError(f"{path}: [geometry] {exc}") from exc

    near = _Section(parser, "near", path)
    far = _Section(parser, "far", path)
    centers_nf = (near.get_pair("beam_center_1", required=True),
                  near.get_pair("beam_center_2", required=True))
    centers_ff = (far.get_pair("beam_center_1", required=True),
                  far.get_pair("beam_center_2", required=True))
    rois_nf = RoiPair(near.get_rect("roi1"), near.get_rect("roi2"), Plane.NEAR)
    rois_ff = RoiPair(far.get_rect("roi1"), far.get_rect("roi2"), Plane.FAR)

    src = _Section(parser, "source", path)
    common = dict(
        mean_pairs_per_frame=src.get_float("mean_pairs_per_frame", required=True),
        unpaired_fraction=src.get_float("unpaired_fraction", 0.0),
        pump_sigma=src.get_pair("pump_sigma", (10.0, 10.0)),
        beam_center_1=centers_nf[0],
        beam_center_2=centers_nf[1],
    )
    nf_pair = src.get_pair("nf_pair_sigma")
    ff_sum = src.get_pair("ff_sum_sigma")
    if nf_pair is not None and ff_sum is not None:
        source = SourceParams(
            nf_pair_sigma=nf_pair,
            ff_sum_sigma=ff_sum,
            ff_marginal_sigma=src.get_pair("ff_marginal_sigma", (8.5, 8.5)),
            **common,
        )
    else:
        target = src.get_float("violation_target")
        if target is None:
            raise ConfigError(f"{path}: [source] needs either nf_pair_sigma + ff_sum_sigma "
                              "or a violation_target")
        calibrated = calibrate_to_violation(
            target,
            src.get_pair("anisotropy", (1.0, 1.0)),
            geometry,
            ff_sum_scale=src.get_float("ff_sum_scale", 1.15),
            ff_marginal_sigma=src.get_pair("ff_marginal_sigma"),
            **common,
        )
        source = calibrated

    det = _Section(parser, "detector", path)
    detector = DetectorParams(
        quantum_efficiency=det.get_float("quantum_efficiency", required=True),
        false_count_prob=det.get_float("false_count_prob", 0.0),
        smear_prob=det.get_float("smear_prob", 0.0),
        width=geometry.sensor_width,
        height=geometry.sensor_height,
    )

    run = _Section(parser, "run", path)
    ana = _Section(parser, "analysis", path) if parser.has_section("analysis") else None
    if ana is not None:
        smear_axis = ana.get_str("smear_axis", "y")
        analysis = AnalysisOptions(
            fit_window=ana.get_int("fit_window", 15),
            mask_radius=ana.get_int("mask_radius", 3),
            smear_axis=None if smear_axis in (None, "", "none") else smear_axis,
            bin_size=ana.get_int("bin_size", 8),
            n_resamples=ana.get_int("n_resamples", 100),
            significance=ana.get_float("significance", 5.0),
            pixel_variance=ana.get_float("pixel_variance", 0.0),
        )
    else:
        analysis = AnalysisOptions()

    config = RunConfig(
        geometry=geometry,
        source=source,
        detector=detector,
        rois_nf=rois_nf,
        rois_ff=rois_ff,
        centers_nf=centers_nf,
        centers_ff=centers_ff,
        n_frames=run.get_int("n_frames", required=True),
        seed=run.get_int("seed", required=True),
        analysis=analysis,
    )
    config.validate()
    return config
