"""Heisenberg-inequality verdict from the near- and far-field fits.

Per-axis variance products and the isotropic combination

    P_iso = 1/4 * (Dx^2 + Dy^2) * (Dpx^2 + Dpy^2)   [hbar^2]

are compared against the single-particle bound hbar^2/4; the violation
factor is bound/product.  Uncertainties come from first-order propagation of
the fit covariances and, when the stacks are available, from bootstrap
resampling of frames; the verdict uses the more pessimistic of the two
(product + 1 sigma must stay below the bound).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rng_streams
from .correlator import (EstimatorError, MaskError, RoiPair, build_mask,
                         intercorrelation, variance_of_difference)
from .detector import FrameStack
from .optics import OpticalGeometry, heisenberg_product_1d
from .peakfit import (FitWindowError, GaussFit, NoPeakError, auto_window,
                      combine_axes, combine_axes_error, fit_gaussian,
                      integrate_R)

BOUND = 0.25  # single-particle bound on the variance product, in hbar^2


@dataclass(frozen=True)
class AnalysisOptions:
    """Knobs of the correlation-to-verdict chain.

    pixel_variance is subtracted from fitted width variances before products
    are formed (Sheppard's correction for the two rounded photon positions,
    2/12 for square pixels); 0 disables the correction and reports raw
    fitted widths.
    """

    fit_window: int = 15
    mask_radius: int = 3
    smear_axis: str | None = "y"
    bin_size: int = 8
    n_resamples: int = 100
    significance: float = 5.0
    pixel_variance: float = 0.0


@dataclass
class AxisSet:
    x: float
    y: float
    iso: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EprReport:
    """Everything the verdict rests on, ready for JSON serialization."""

    nf_fit: GaussFit
    ff_fit: GaussFit
    delta_r: float
    delta_r_err: float
    delta_p: float
    delta_p_err: float
    r_n: float
    r_p: float
    products: AxisSet
    product_errors_fit: AxisSet
    factors: AxisSet
    factor_errors_fit: AxisSet
    verdicts: dict
    geometry: dict
    widths_nf: tuple[float, float]
    widths_ff: tuple[float, float]
    pixel_variance: float = 0.0
    product_errors_bootstrap: AxisSet | None = None
    fluence_nf: float | None = None
    fluence_ff: float | None = None
    n_frames_nf: int | None = None
    n_frames_ff: int | None = None

    @property
    def verdict(self) -> bool:
        """Overall verdict: the isotropic product beats the bound."""
        return bool(self.verdicts["iso"])

    def to_dict(self) -> dict:
        return {
            "bound_hbar2": BOUND,
            "geometry": self.geometry,
            "pixel_variance_correction": self.pixel_variance,
            "near_field": {
                "fit": self.nf_fit.to_dict(),
                "widths_px": list(self.widths_nf),
                "delta_r_px": self.delta_r,
                "delta_r_err_px": self.delta_r_err,
                "R": self.r_n,
                "fluence": self.fluence_nf,
                "n_frames": self.n_frames_nf,
            },
            "far_field": {
                "fit": self.ff_fit.to_dict(),
                "widths_px": list(self.widths_ff),
                "delta_p_px": self.delta_p,
                "delta_p_err_px": self.delta_p_err,
                "R": self.r_p,
                "fluence": self.fluence_ff,
                "n_frames": self.n_frames_ff,
            },
            "products_hbar2": self.products.to_dict(),
            "product_errors_hbar2": {
                "fit": self.product_errors_fit.to_dict(),
                "bootstrap": (self.product_errors_bootstrap.to_dict()
                              if self.product_errors_bootstrap else None),
            },
            "factors": self.factors.to_dict(),
            "factor_errors_fit": self.factor_errors_fit.to_dict(),
            "verdicts": {k: bool(v) for k, v in self.verdicts.items()},
            "verdict": self.verdict,
        }

    def summary(self) -> str:
        """Human-readable mirror of the three inequalities."""
        lines = [
            f"near field : Dx = {self.widths_nf[0]:.3f} px, Dy = {self.widths_nf[1]:.3f} px, "
            f"Dr = {self.delta_r:.3f} +/- {self.delta_r_err:.3f} px, R = {self.r_n:.3e}",
            f"far field  : Dpx = {self.widths_ff[0]:.3f} px, Dpy = {self.widths_ff[1]:.3f} px, "
            f"Dp = {self.delta_p:.3f} +/- {self.delta_p_err:.3f} px, R = {self.r_p:.3e}",
        ]
        if self.pixel_variance:
            lines.append(f"(widths pixel-corrected: variance -{self.pixel_variance:g} px^2)")
        for axis, label in (("x", "D2x*D2px"), ("y", "D2y*D2py"), ("iso", "D2r*D2p ")):
            product = getattr(self.products, axis)
            err = getattr(self.product_errors_fit, axis)
            if self.product_errors_bootstrap is not None:
                err = max(err, getattr(self.product_errors_bootstrap, axis))
            rel = "<" if self.verdicts[axis] else ">="
            lines.append(
                f"{label} = ({product:.4f} +/- {err:.4f}) hbar^2 {rel} hbar^2/4   "
                f"violation factor {getattr(self.factors, axis):.2f}"
            )
        lines.append(f"verdict: {'VIOLATION' if self.verdict else 'no violation'}")
        return "\n".join(lines)


def _product_error(p: float, sa: float, sb: float, ea: float, eb: float) -> float:
    # p = (sa*sb*unit)^2; relative error 2*(ea/sa (+) eb/sb)
    return 2.0 * p * math.sqrt((ea / sa) ** 2 + (eb / sb) ** 2)


def _iso_product(nf: tuple[float, float], ff: tuple[float, float], g: OpticalGeometry) -> float:
    return 0.25 * (nf[0] ** 2 + nf[1] ** 2) * (ff[0] ** 2 + ff[1] ** 2) * g.product_unit**2


def _iso_product_error(nf, ff, enf, eff, g) -> float:
    p = _iso_product(nf, ff, g)
    sum_nf = nf[0] ** 2 + nf[1] ** 2
    sum_ff = ff[0] ** 2 + ff[1] ** 2
    rel_nf2 = ((nf[0] * enf[0]) ** 2 + (nf[1] * enf[1]) ** 2) / sum_nf**2
    rel_ff2 = ((ff[0] * eff[0]) ** 2 + (ff[1] * eff[1]) ** 2) / sum_ff**2
    return 2.0 * p * math.sqrt(rel_nf2 + rel_ff2)


def _deconvolve_pixel(sigma, err, pixel_variance: float, label: str):
    """Sheppard-corrected widths: sqrt(sigma^2 - pixel_variance), errors rescaled."""
    if pixel_variance == 0.0:
        return sigma, err
    if any(s**2 <= pixel_variance for s in sigma):
        raise NoPeakError(
            f"{label} fitted width {sigma!r} is at or below the pixelation floor "
            f"sqrt({pixel_variance:g})"
        )
    corrected = tuple(math.sqrt(s**2 - pixel_variance) for s in sigma)
    scaled = tuple(e * s / c for e, s, c in zip(err, sigma, corrected))
    return corrected, scaled


def build_report(
    nf_fit: GaussFit,
    ff_fit: GaussFit,
    g: OpticalGeometry,
    *,
    bootstrap: "BootstrapErrors | None" = None,
    pixel_variance: float = 0.0,
    fluence_nf: float | None = None,
    fluence_ff: float | None = None,
    n_frames_nf: int | None = None,
    n_frames_ff: int | None = None,
) -> EprReport:
    """Combine the two converged fits into the violation report.

    With pixel_variance > 0 the fitted widths are Sheppard-corrected before
    any product is formed; the fits themselves stay raw (and R, the peak
    integral, always uses the raw widths).
    """
    for label, fit in (("near-field", nf_fit), ("far-field", ff_fit)):
        if not fit.converged:
            raise NoPeakError(f"{label} fit did not converge; no report")

    nf, enf = _deconvolve_pixel(nf_fit.sigma, nf_fit.sigma_err, pixel_variance, "near-field")
    ff, eff = _deconvolve_pixel(ff_fit.sigma, ff_fit.sigma_err, pixel_variance, "far-field")

    products = AxisSet(
        x=heisenberg_product_1d(nf[0], ff[0], g),
        y=heisenberg_product_1d(nf[1], ff[1], g),
        iso=_iso_product(nf, ff, g),
    )
    errors_fit = AxisSet(
        x=_product_error(products.x, nf[0], ff[0], enf[0], eff[0]),
        y=_product_error(products.y, nf[1], ff[1], enf[1], eff[1]),
        iso=_iso_product_error(nf, ff, enf, eff, g),
    )
    factors = AxisSet(x=BOUND / products.x, y=BOUND / products.y, iso=BOUND / products.iso)
    factor_errors = AxisSet(
        x=factors.x * errors_fit.x / products.x,
        y=factors.y * errors_fit.y / products.y,
        iso=factors.iso * errors_fit.iso / products.iso,
    )

    boot_products = bootstrap.product_std if bootstrap is not None else None
    verdicts = {}
    for axis in ("x", "y", "iso"):
        sigma = getattr(errors_fit, axis)
        if boot_products is not None:
            sigma = max(sigma, getattr(boot_products, axis))
        verdicts[axis] = getattr(products, axis) + sigma < BOUND

    return EprReport(
        nf_fit=nf_fit,
        ff_fit=ff_fit,
        widths_nf=nf,
        widths_ff=ff,
        pixel_variance=pixel_variance,
        delta_r=combine_axes(*nf),
        delta_r_err=combine_axes_error(nf[0], nf[1], enf[0], enf[1]),
        delta_p=combine_axes(*ff),
        delta_p_err=combine_axes_error(ff[0], ff[1], eff[0], eff[1]),
        r_n=integrate_R(nf_fit),
        r_p=integrate_R(ff_fit),
        products=products,
        product_errors_fit=errors_fit,
        factors=factors,
        factor_errors_fit=factor_errors,
        verdicts=verdicts,
        geometry={
            "pixel_pitch_m": g.pixel_pitch,
            "focal_length_m": g.focal_length,
            "wavelength_m": g.wavelength,
            "sensor_width_px": g.sensor_width,
            "sensor_height_px": g.sensor_height,
        },
        product_errors_bootstrap=boot_products,
        fluence_nf=fluence_nf,
        fluence_ff=fluence_ff,
        n_frames_nf=n_frames_nf,
        n_frames_ff=n_frames_ff,
    )


# ---------------------------------------------------------------------------
# Bootstrap over frames
# ---------------------------------------------------------------------------
@dataclass
class BootstrapErrors:
    """Standard deviations over frame-resampled reruns of the analysis."""

    width_std_nf: tuple[float, float]
    width_std_ff: tuple[float, float]
    delta_r_std: float
    delta_p_std: float
    r_n_std: float
    r_p_std: float
    vod_ff_std: float
    product_std: AxisSet
    factor_std: AxisSet
    n_resamples: int
    n_failed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["product_std"] = self.product_std.to_dict()
        d["factor_std"] = self.factor_std.to_dict()
        return d


def _resampled(stack: FrameStack, idx: np.ndarray) -> FrameStack:
    return FrameStack(plane=stack.plane, width=stack.width, height=stack.height,
                      seed=stack.seed, packed=stack.packed[idx])


def _analyze_once(stack: FrameStack, rois: RoiPair, options: AnalysisOptions) -> GaussFit:
    cmap = intercorrelation(stack, rois)
    cmap = build_mask(cmap, rois, smear_axis=options.smear_axis,
                      mask_radius=options.mask_radius,
                      fit_halfwidth=options.fit_window // 2)
    fit = fit_gaussian(cmap, window=auto_window(cmap, options.fit_window),
                       significance=options.significance)
    if not fit.converged:
        raise NoPeakError("fit did not converge")
    return fit


def bootstrap_errors(
    stack_nf: FrameStack,
    stack_ff: FrameStack,
    rois_nf: RoiPair,
    rois_ff: RoiPair,
    g: OpticalGeometry,
    n_resamples: int = 100,
    seed: int = 0,
    options: AnalysisOptions | None = None,
) -> BootstrapErrors:
    """Bootstrap the full correlate -> fit -> report chain over frames.

    Frames of each stack are resampled with replacement (independently per
    stack, from the dedicated bootstrap stream of `seed`), the analysis is
    rerun per resample, and the spread of every derived quantity is
    returned.  Resamples where the fit fails are skipped; more than 10%
    failures abort with a diagnostic.
    """
    if n_resamples < 50:
        raise ValueError(f"need at least 50 resamples for stable spreads, got {n_resamples}")
    options = options or AnalysisOptions()

    rows: list[dict] = []
    failures: list[str] = []
    for r in range(n_resamples):
        gen = rng_streams.stream(seed, rng_streams.BOOTSTRAP_STREAM, r)
        idx_nf = gen.integers(0, stack_nf.n_frames, stack_nf.n_frames)
        idx_ff = gen.integers(0, stack_ff.n_frames, stack_ff.n_frames)
        try:
            fit_nf = _analyze_once(_resampled(stack_nf, idx_nf), rois_nf, options)
            sub_ff = _resampled(stack_ff, idx_ff)
            fit_ff = _analyze_once(sub_ff, rois_ff, options)
            vod = variance_of_difference(sub_ff, rois_ff, bin=options.bin_size)
            nf, _ = _deconvolve_pixel(fit_nf.sigma, fit_nf.sigma_err,
                                      options.pixel_variance, "near-field")
            ff, _ = _deconvolve_pixel(fit_ff.sigma, fit_ff.sigma_err,
                                      options.pixel_variance, "far-field")
            rows.append({
                "nf_x": nf[0], "nf_y": nf[1], "ff_x": ff[0], "ff_y": ff[1],
                "delta_r": combine_axes(*nf), "delta_p": combine_axes(*ff),
                "r_n": integrate_R(fit_nf), "r_p": integrate_R(fit_ff),
                "vod": vod,
                "px": heisenberg_product_1d(nf[0], ff[0], g),
                "py": heisenberg_product_1d(nf[1], ff[1], g),
                "piso": _iso_product(nf, ff, g),
            })
        except (NoPeakError, FitWindowError, EstimatorError, MaskError) as exc:
            failures.append(f"resample {r}: {exc}")
            continue

    if len(failures) > 0.1 * n_resamples:
        raise RuntimeError(
            f"bootstrap aborted: {len(failures)}/{n_resamples} resamples failed "
            f"(first failure: {failures[0]})"
        )

    def std(key: str) -> float:
        return float(np.std([row[key] for row in rows]))

    product_std = AxisSet(x=std("px"), y=std("py"), iso=std("piso"))
    factor_std = AxisSet(
        x=float(np.std([BOUND / row["px"] for row in rows])),
        y=float(np.std([BOUND / row["py"] for row in rows])),
        iso=float(np.std([BOUND / row["piso"] for row in rows])),
    )
    return BootstrapErrors(
        width_std_nf=(std("nf_x"), std("nf_y")),
        width_std_ff=(std("ff_x"), std("ff_y")),
        delta_r_std=std("delta_r"),
        delta_p_std=std("delta_p"),
        r_n_std=std("r_n"),
        r_p_std=std("r_p"),
        vod_ff_std=std("vod"),
        product_std=product_std,
        factor_std=factor_std,
        n_resamples=n_resamples,
        n_failed=len(failures),
    )
