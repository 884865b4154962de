"""Axis-aligned 2D Gaussian fit of the intercorrelation peak.

Model: A * exp(-(dx-x0)^2/(2*sx^2) - (dy-y0)^2/(2*sy^2)) + b, fitted by
damped least squares with analytic gradients over the unmasked displacements
of a window around the peak.  Masked displacements are excluded from the
residual, never imputed.  The baseline is free because the normalized map
carries a small estimator offset at finite frame counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .correlator import CorrMap

DEFAULT_WINDOW = 15
MIN_WINDOW_POINTS = 25


class NoPeakError(RuntimeError):
    """Raised when the window holds no significant positive peak."""


class FitWindowError(ValueError):
    """Raised for windows that cannot support a six-parameter fit."""


@dataclass
class GaussFit:
    """Fit result; widths and centers are in displacement pixels.

    covariance is the 6x6 parameter covariance for (A, x0, y0, sx, sy, b):
    residual variance times the inverse Gauss-Newton normal matrix.
    window records the fitted region as map indices (ix0, iy0, w, h);
    n_masked is the number of excluded displacements inside it.
    """

    amplitude: float
    center: tuple[float, float]
    sigma: tuple[float, float]
    baseline: float
    covariance: np.ndarray
    window: tuple[int, int, int, int]
    converged: bool
    residual_rms: float
    n_points: int
    n_masked: int
    initial_gradient_norm: float
    final_gradient_norm: float

    @property
    def sigma_err(self) -> tuple[float, float]:
        return (math.sqrt(max(self.covariance[3, 3], 0.0)),
                math.sqrt(max(self.covariance[4, 4], 0.0)))

    @property
    def amplitude_err(self) -> float:
        return math.sqrt(max(self.covariance[0, 0], 0.0))

    def to_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "center": list(self.center),
            "sigma": list(self.sigma),
            "baseline": self.baseline,
            "sigma_err": list(self.sigma_err),
            "amplitude_err": self.amplitude_err,
            "covariance": self.covariance.tolist(),
            "window": list(self.window),
            "converged": self.converged,
            "residual_rms": self.residual_rms,
            "n_points": self.n_points,
            "n_masked": self.n_masked,
        }


def _model(params, dx, dy):
    a, x0, y0, sx, sy, b = params
    return a * np.exp(-((dx - x0) ** 2) / (2 * sx**2) - ((dy - y0) ** 2) / (2 * sy**2)) + b


def _jacobian(params, dx, dy):
    a, x0, y0, sx, sy, b = params
    core = np.exp(-((dx - x0) ** 2) / (2 * sx**2) - ((dy - y0) ** 2) / (2 * sy**2))
    val = a * core
    jac = np.empty((dx.size, 6))
    jac[:, 0] = core
    jac[:, 1] = val * (dx - x0) / sx**2
    jac[:, 2] = val * (dy - y0) / sy**2
    jac[:, 3] = val * (dx - x0) ** 2 / sx**3
    jac[:, 4] = val * (dy - y0) ** 2 / sy**3
    jac[:, 5] = 1.0
    return jac


def _initial_guess(dx, dy, v, win_w, win_h):
    b = float(np.median(v))
    peak = int(np.argmax(v))
    a = float(v[peak] - b)
    x0, y0 = float(dx[peak]), float(dy[peak])
    excess = np.clip(v - b, 0.0, None)
    total = excess.sum()
    if total > 0:
        mx = float((excess * dx).sum() / total)
        my = float((excess * dy).sum() / total)
        sx = math.sqrt(max(float((excess * (dx - mx) ** 2).sum() / total), 0.0))
        sy = math.sqrt(max(float((excess * (dy - my) ** 2).sum() / total), 0.0))
    else:
        sx = sy = 0.0
    sx = min(max(sx, 0.5), win_w / 4.0)
    sy = min(max(sy, 0.5), win_h / 4.0)
    return np.array([a, x0, y0, sx, sy, b])


def auto_window(cmap: CorrMap, size: int = DEFAULT_WINDOW) -> tuple[int, int, int, int]:
    """size x size window centered on the peak, clamped to the map edges.

    The center comes from the argmax of a 3x3 box-smoothed copy (masked
    cells replaced by the median), which keeps the window on a broad peak
    even when single-displacement noise rivals its amplitude; the fit always
    runs on the raw values.
    """
    h, w = cmap.shape
    filled = np.where(cmap.mask, np.median(cmap.values[~cmap.mask]), cmap.values)
    smooth = sum(np.roll(np.roll(filled, dy, axis=0), dx, axis=1)
                 for dy in (-1, 0, 1) for dx in (-1, 0, 1)) / 9.0
    smooth[cmap.mask] = -np.inf
    iy, ix = np.unravel_index(int(np.argmax(smooth)), cmap.shape)
    half = size // 2
    ix0 = min(max(int(ix) - half, 0), max(w - size, 0))
    iy0 = min(max(int(iy) - half, 0), max(h - size, 0))
    return (ix0, iy0, min(size, w), min(size, h))


def fit_gaussian(cmap: CorrMap, window: tuple[int, int, int, int] | None = None,
                 significance: float = 5.0) -> GaussFit:
    """Fit the correlation peak inside a window of the map.

    Parameters
    ----------
    cmap : CorrMap
        Map to fit; masked displacements are ignored.
    window : (ix0, iy0, w, h) in map indices, optional
        Defaults to a 15x15 box centered on the unmasked maximum (clamped to
        the map edges).
    significance : float
        Minimum amplitude / amplitude-error ratio for a peak to count; below
        it (or for non-positive amplitude) NoPeakError is raised.

    Raises
    ------
    FitWindowError : fewer than 25 unmasked displacements in the window.
    NoPeakError    : flat window or insignificant fitted amplitude.
    """
    h, w = cmap.shape
    if window is None:
        window = auto_window(cmap)
    ix0, iy0, win_w, win_h = window

    sub = cmap.values[iy0:iy0 + win_h, ix0:ix0 + win_w]
    submask = cmap.mask[iy0:iy0 + win_h, ix0:ix0 + win_w]
    if sub.shape != (win_h, win_w):
        raise FitWindowError(f"window {window!r} exceeds the {w}x{h} map")
    keep = ~submask
    n_points = int(keep.sum())
    if n_points < MIN_WINDOW_POINTS:
        raise FitWindowError(f"window holds {n_points} unmasked displacements; need >= {MIN_WINDOW_POINTS}")

    cx, cy = cmap.center
    gx, gy = np.meshgrid(np.arange(ix0, ix0 + win_w) - cx, np.arange(iy0, iy0 + win_h) - cy)
    dx = gx[keep].astype(float)
    dy = gy[keep].astype(float)
    v = sub[keep].astype(float)

    p0 = _initial_guess(dx, dy, v, win_w, win_h)
    if p0[0] <= 0.0:
        raise NoPeakError("window is flat: no positive excess over the baseline")

    g_init = float(np.linalg.norm(_jacobian(p0, dx, dy).T @ (_model(p0, dx, dy) - v)))

    result = least_squares(
        lambda p: _model(p, dx, dy) - v,
        p0,
        jac=lambda p: _jacobian(p, dx, dy),
        method="lm",
        xtol=1e-10,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=2000,
    )
    params = result.x.copy()
    params[3] = abs(params[3])  # model is even in the widths
    params[4] = abs(params[4])

    residuals = _model(params, dx, dy) - v
    g_final = float(np.linalg.norm(_jacobian(params, dx, dy).T @ residuals))
    grad_ok = g_final <= 1e-8 * g_init if g_init > 0 else g_final == 0.0
    converged = bool(result.status >= 1) and grad_ok

    dof = max(n_points - 6, 1)
    s2 = float(residuals @ residuals) / dof
    jac = _jacobian(params, dx, dy)
    jtj = jac.T @ jac
    cov = s2 * np.linalg.pinv((jtj + jtj.T) / 2.0)

    fit = GaussFit(
        amplitude=float(params[0]),
        center=(float(params[1]), float(params[2])),
        sigma=(float(params[3]), float(params[4])),
        baseline=float(params[5]),
        covariance=cov,
        window=tuple(window),
        converged=converged,
        residual_rms=float(np.sqrt(np.mean(residuals**2))),
        n_points=n_points,
        n_masked=int(submask.sum()),
        initial_gradient_norm=g_init,
        final_gradient_norm=g_final,
    )
    if fit.amplitude <= 0.0:
        raise NoPeakError("fitted amplitude is not positive")
    # physical sanity: a real displacement peak carries at least the
    # double-pixelation variance (sigma >= sqrt(1/6)), and must be resolved
    # inside the window rather than fitted as a ramp across it
    min_sigma, max_sigma = 0.4, max(win_w, win_h) / 2.0
    if not all(min_sigma <= s <= max_sigma for s in fit.sigma):
        raise NoPeakError(f"fitted widths {fit.sigma} outside the resolvable "
                          f"range [{min_sigma}, {max_sigma:g}] px")
    if not (dx.min() <= fit.center[0] <= dx.max() and dy.min() <= fit.center[1] <= dy.max()):
        raise NoPeakError(f"fitted center {fit.center} left the window")
    if converged and significance > 0 and s2 > 0.0:
        err = fit.amplitude_err
        if err == 0.0 or not math.isfinite(err):
            raise NoPeakError("fit covariance is degenerate; peak not certifiable")
        if fit.amplitude < significance * err:
            raise NoPeakError(
                f"peak amplitude {fit.amplitude:.3g} is below {significance:g} sigma "
                f"({err:.3g}) of the fit noise"
            )
    return fit


def integrate_R(fit: GaussFit) -> float:
    """Total correlation coefficient: the fitted peak integrated, baseline excluded."""
    if not fit.converged:
        raise NoPeakError("cannot integrate an unconverged fit")
    if fit.amplitude <= 0:
        raise NoPeakError("cannot integrate a non-positive peak")
    return 2.0 * math.pi * fit.amplitude * fit.sigma[0] * fit.sigma[1]


def integrate_R_error(fit: GaussFit) -> float:
    """First-order error of integrate_R from the parameter covariance."""
    a = fit.amplitude
    sx, sy = fit.sigma
    grad = np.zeros(6)
    grad[0] = 2.0 * math.pi * sx * sy
    grad[3] = 2.0 * math.pi * a * sy
    grad[4] = 2.0 * math.pi * a * sx
    return float(math.sqrt(max(grad @ fit.covariance @ grad, 0.0)))


def combine_axes(sx: float, sy: float) -> float:
    """Isotropic width: root mean square of the two per-axis widths."""
    if sx <= 0 or sy <= 0:
        raise ValueError(f"widths must be positive, got ({sx!r}, {sy!r})")
    return math.sqrt(0.5 * (sx**2 + sy**2))


def combine_axes_error(sx: float, sy: float, ex: float, ey: float) -> float:
    """First-order error of combine_axes for independent width errors."""
    dr = combine_axes(sx, sy)
    return math.sqrt((sx * ex) ** 2 + (sy * ey) ** 2) / (2.0 * dr)
