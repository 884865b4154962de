"""Biphoton source model.

Pairs are sampled per frame from a double-Gaussian model: each photon's
single-arm (marginal) distribution is Gaussian, and the twin's position is
the mirror of its partner plus a Gaussian conditional spread.  The two
measurement planes use opposite mirror conventions:

* near field: the twin appears at the *same* transverse position, offset to
  the other polarization spot (position correlation),
* far field: the twin appears at the *opposite* transverse momentum
  (momentum anti-correlation).

Positions stay continuous here; pixelation happens only in the detector.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .optics import OpticalGeometry


class ConfigError(ValueError):
    """Raised for invalid source / run parameters."""


class Plane(enum.IntEnum):
    NEAR = 0
    FAR = 1


class Arm(enum.IntEnum):
    SIGNAL = 0
    IDLER = 1


@dataclass(frozen=True)
class SourceParams:
    """Gaussian biphoton model parameters (all widths are 1-sigma, in pixels).

    Attributes
    ----------
    pump_sigma : (float, float)
        Near-field envelope of each beam (x, y).
    nf_pair_sigma : (float, float)
        Conditional spread of the twin around its partner in the near field.
    ff_sum_sigma : (float, float)
        Conditional spread of the momentum sum in the far field.
    ff_marginal_sigma : (float, float)
        Single-arm far-field envelope; must dominate ff_sum_sigma
        (anti-correlation is much tighter than the marginal).
    mean_pairs_per_frame : float
        Poisson mean of generated pairs per frame.
    unpaired_fraction : float
        Probability in [0, 1) that a photon's partner link is broken: the
        photon is re-drawn from its own marginal, keeping single-arm
        intensity fixed while degrading the correlation.
    beam_center_1, beam_center_2 : (float, float)
        Centers of the two polarization spots, in sensor pixels.
    """

    pump_sigma: tuple[float, float]
    nf_pair_sigma: tuple[float, float]
    ff_sum_sigma: tuple[float, float]
    ff_marginal_sigma: tuple[float, float]
    mean_pairs_per_frame: float
    unpaired_fraction: float = 0.0
    beam_center_1: tuple[float, float] = (32.0, 64.0)
    beam_center_2: tuple[float, float] = (96.0, 64.0)

    def __post_init__(self):
        for name in ("pump_sigma", "nf_pair_sigma", "ff_sum_sigma", "ff_marginal_sigma"):
            sig = getattr(self, name)
            if len(sig) != 2 or not all(s > 0 and math.isfinite(s) for s in sig):
                raise ConfigError(f"{name} must be two strictly positive widths, got {sig!r}")
        if any(m < s for m, s in zip(self.ff_marginal_sigma, self.ff_sum_sigma)):
            raise ConfigError(
                "ff_marginal_sigma must be >= ff_sum_sigma componentwise "
                f"(got {self.ff_marginal_sigma!r} < {self.ff_sum_sigma!r})"
            )
        if not self.mean_pairs_per_frame >= 0:
            raise ConfigError(f"mean_pairs_per_frame must be >= 0, got {self.mean_pairs_per_frame!r}")
        if not 0.0 <= self.unpaired_fraction < 1.0:
            raise ConfigError(f"unpaired_fraction must lie in [0, 1), got {self.unpaired_fraction!r}")


@dataclass
class PhotonEvents:
    """Continuous photon positions for one frame.

    Paired photons are adjacent in generation order (signal then idler), but
    nothing downstream may rely on that: detection treats every event alike.
    """

    plane: Plane
    x: np.ndarray
    y: np.ndarray
    arm: np.ndarray

    def __len__(self) -> int:
        return self.x.size


def _marginal_sigma(p: SourceParams, plane: Plane) -> tuple[float, float]:
    return p.pump_sigma if plane == Plane.NEAR else p.ff_marginal_sigma


def _draw_pairs(p: SourceParams, plane: Plane, rng: np.random.Generator, k: int):
    """Draw k correlated pairs; returns (r1, r2) arrays of shape (k, 2)."""
    c1 = np.asarray(p.beam_center_1, dtype=float)
    c2 = np.asarray(p.beam_center_2, dtype=float)
    marg = np.asarray(_marginal_sigma(p, plane), dtype=float)
    r1 = c1 + rng.standard_normal((k, 2)) * marg
    if plane == Plane.NEAR:
        eps = rng.standard_normal((k, 2)) * np.asarray(p.nf_pair_sigma, dtype=float)
        r2 = (r1 - c1) + c2 + eps
    else:
        eta = rng.standard_normal((k, 2)) * np.asarray(p.ff_sum_sigma, dtype=float)
        r2 = c2 - (r1 - c1) + eta
    return r1, r2


def sample_frame(p: SourceParams, plane: Plane, rng: np.random.Generator) -> PhotonEvents:
    """Sample one frame of photon events.

    The pair count is Poisson(mean_pairs_per_frame).  With a nonzero
    unpaired fraction, each photon is independently cut loose with
    probability unpaired_fraction/2 and replaced by a fresh draw from its
    own marginal, so single-arm statistics are unchanged.

    The number and order of random draws depend only on the Poisson count,
    so a frame is fully reproducible from its stream.
    """
    plane = Plane(plane)
    k = int(rng.poisson(p.mean_pairs_per_frame))
    if k == 0:
        empty = np.empty(0, dtype=float)
        return PhotonEvents(plane, empty, empty.copy(), np.empty(0, dtype=np.uint8))

    r1, r2 = _draw_pairs(p, plane, rng, k)

    if p.unpaired_fraction > 0.0:
        half = 0.5 * p.unpaired_fraction
        break1 = rng.random(k) < half
        break2 = rng.random(k) < half
        # Redraws are full-size so the draw count is independent of the masks.
        f1, _ = _draw_pairs(p, plane, rng, k)
        _, f2 = _draw_pairs(p, plane, rng, k)
        r1 = np.where(break1[:, None], f1, r1)
        r2 = np.where(break2[:, None], f2, r2)

    x = np.empty(2 * k, dtype=float)
    y = np.empty(2 * k, dtype=float)
    x[0::2], x[1::2] = r1[:, 0], r2[:, 0]
    y[0::2], y[1::2] = r1[:, 1], r2[:, 1]
    arm = np.empty(2 * k, dtype=np.uint8)
    arm[0::2] = Arm.SIGNAL
    arm[1::2] = Arm.IDLER
    return PhotonEvents(plane, x, y, arm)


# ---------------------------------------------------------------------------
# Violation-factor arithmetic
# ---------------------------------------------------------------------------
def expected_violation(p: SourceParams, g: OpticalGeometry) -> float:
    """Violation factor the analysis should recover absent detector distortion.

    Combines both axes isotropically:

        V = (1/4) / [ 1/4 * (snf_x^2 + snf_y^2) * (sff_x^2 + sff_y^2) * unit^2 ]

    with unit = 2*pi*pixel_pitch^2/(f*lambda) converting pixel-width products
    to hbar.  V > 1 means the source beats the single-particle bound.
    """
    nf2 = p.nf_pair_sigma[0] ** 2 + p.nf_pair_sigma[1] ** 2
    ff2 = p.ff_sum_sigma[0] ** 2 + p.ff_sum_sigma[1] ** 2
    product = 0.25 * nf2 * ff2 * g.product_unit**2
    return 0.25 / product


def calibrate_to_violation(
    v_target: float,
    anisotropy: tuple[float, float],
    g: OpticalGeometry,
    *,
    ff_sum_scale: float = 1.15,
    mean_pairs_per_frame: float = 200.0,
    unpaired_fraction: float = 0.0,
    pump_sigma: tuple[float, float] | None = None,
    ff_marginal_sigma: tuple[float, float] | None = None,
    beam_center_1: tuple[float, float] | None = None,
    beam_center_2: tuple[float, float] | None = None,
) -> SourceParams:
    """Build SourceParams whose expected violation factor equals v_target.

    The anisotropy ratio (ax, ay) is applied to the near-field conditional
    widths and inversely to the far-field sum widths, so the per-axis width
    products are equal and only the overall scale is solved for.
    ff_sum_scale fixes the geometric mean of the far-field sum widths; the
    near-field widths absorb the rest of the required product.
    """
    if not v_target > 0:
        raise ConfigError(f"v_target must be positive, got {v_target!r}")
    ax, ay = anisotropy
    if not (ax > 0 and ay > 0):
        raise ConfigError(f"anisotropy components must be positive, got {anisotropy!r}")
    if not ff_sum_scale > 0:
        raise ConfigError(f"ff_sum_scale must be positive, got {ff_sum_scale!r}")

    gm = math.sqrt(ax * ay)
    ahat = (ax / gm, ay / gm)
    # Isotropic combination penalty for anisotropic widths; 1 when ax == ay.
    shape = 0.25 * (ahat[0] ** 2 + ahat[1] ** 2) * (ahat[0] ** -2 + ahat[1] ** -2)
    # Geometric-mean width product (nf * ff, px^2) giving the target factor.
    width_product = 0.5 / (g.product_unit * math.sqrt(v_target * shape))

    nf_scale = width_product / ff_sum_scale
    nf_pair = (nf_scale * ahat[0], nf_scale * ahat[1])
    ff_sum = (ff_sum_scale / ahat[0], ff_sum_scale / ahat[1])

    if pump_sigma is None:
        pump_sigma = (10.0, 10.0)
    if ff_marginal_sigma is None:
        m = max(8.5, 4.0 * max(ff_sum))
        ff_marginal_sigma = (m, m)
    if beam_center_1 is None:
        beam_center_1 = (g.sensor_width / 4.0, g.sensor_height / 2.0)
    if beam_center_2 is None:
        beam_center_2 = (3.0 * g.sensor_width / 4.0, g.sensor_height / 2.0)

    params = SourceParams(
        pump_sigma=pump_sigma,
        nf_pair_sigma=nf_pair,
        ff_sum_sigma=ff_sum,
        ff_marginal_sigma=ff_marginal_sigma,
        mean_pairs_per_frame=mean_pairs_per_frame,
        unpaired_fraction=unpaired_fraction,
        beam_center_1=beam_center_1,
        beam_center_2=beam_center_2,
    )
    achieved = expected_violation(params, g)
    if abs(achieved - v_target) > 1e-6 * v_target:
        # Width solve is closed-form; any residual means a numeric problem.
        raise ConfigError(f"calibration failed: achieved {achieved!r} vs target {v_target!r}")
    return params


def with_rate(p: SourceParams, mean_pairs_per_frame: float) -> SourceParams:
    """Copy of p with a different pair rate (handy when calibrating fluence)."""
    return replace(p, mean_pairs_per_frame=mean_pairs_per_frame)


def schmidt_number(p: SourceParams) -> float:
    """Two-photon mode count of the Gaussian model (far-field widths).

    Per axis the momentum sum has width s = ff_sum_sigma and the difference
    d = sqrt(4 marginal^2 + s^2); for a Gaussian pair state the mode count is
    K = (d/s + s/d)^2 / 4 per axis, 1 for a separable (single-mode) source.
    Returns the product over the two axes.
    """
    k = 1.0
    for axis in (0, 1):
        s = p.ff_sum_sigma[axis]
        d = math.sqrt(4.0 * p.ff_marginal_sigma[axis] ** 2 + s**2)
        k *= 0.25 * (d / s + s / d) ** 2
    return k
