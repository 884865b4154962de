"""Figure rendering for the report path (files only, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .correlator import CorrMap
from .peakfit import GaussFit, _model
from .report import BOUND, EprReport

_DPI = 120


def _extent(cmap: CorrMap):
    h, w = cmap.shape
    cx, cy = cmap.center
    return (-cx - 0.5, w - cx - 0.5, -cy - 0.5, h - cy - 0.5)


def save_corrmap_figure(cmap: CorrMap, path, title: str = "") -> Path:
    """Heatmap of F over displacement, masked cells hatched out."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    shown = np.ma.masked_array(cmap.values, mask=cmap.mask)
    im = ax.imshow(shown, origin="lower", extent=_extent(cmap), cmap="inferno",
                   interpolation="nearest")
    fig.colorbar(im, ax=ax, label="F")
    ax.set_xlabel(r"$\delta x$ [px]")
    ax.set_ylabel(r"$\delta y$ [px]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_fit_figure(cmap: CorrMap, fit: GaussFit, path, title: str = "") -> Path:
    """Data / model / residual panels over the fit window."""
    path = Path(path)
    ix0, iy0, w, h = fit.window
    cx, cy = cmap.center
    sub = np.ma.masked_array(cmap.values, mask=cmap.mask)[iy0:iy0 + h, ix0:ix0 + w]
    gx, gy = np.meshgrid(np.arange(ix0, ix0 + w) - cx, np.arange(iy0, iy0 + h) - cy)
    params = (fit.amplitude, *fit.center, *fit.sigma, fit.baseline)
    model = _model(params, gx.astype(float), gy.astype(float))
    extent = (gx.min() - 0.5, gx.max() + 0.5, gy.min() - 0.5, gy.max() + 0.5)

    fig, axes = plt.subplots(1, 3, figsize=(11, 3.6))
    for ax, data, label in zip(axes, (sub, model, sub - model), ("data", "fit", "residual")):
        im = ax.imshow(data, origin="lower", extent=extent, cmap="inferno",
                       interpolation="nearest")
        fig.colorbar(im, ax=ax)
        ax.set_title(label)
        ax.set_xlabel(r"$\delta x$ [px]")
    axes[0].set_ylabel(r"$\delta y$ [px]")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_report_figure(report: EprReport, path) -> Path:
    """Variance products against the hbar^2/4 bound."""
    path = Path(path)
    labels = ["x", "y", "iso"]
    values = [getattr(report.products, k) for k in labels]
    errors = []
    for k in labels:
        err = getattr(report.product_errors_fit, k)
        if report.product_errors_bootstrap is not None:
            err = max(err, getattr(report.product_errors_bootstrap, k))
        errors.append(err)

    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.bar(labels, values, yerr=errors, capsize=4, color="#31688e")
    ax.axhline(BOUND, color="crimson", linestyle="--",
               label=r"bound $\hbar^2/4$")
    ax.set_ylabel(r"variance product [$\hbar^2$]")
    for i, k in enumerate(labels):
        ax.annotate(f"V = {getattr(report.factors, k):.2f}",
                    (i, values[i]), textcoords="offset points", xytext=(0, 8),
                    ha="center", fontsize=9)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
