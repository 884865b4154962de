"""Normalized intercorrelation of signal/idler regions over a frame stack.

For counts N1, N2 on same-sized regions, the pair-detection probability per
displacement is estimated as

    F(dx, dy) = [ <N1 N2> - <N1><N2> ] / ( (<N1> + <N2>) / 2 )

evaluated on the circular (periodized, no zero padding) displacement grid via
the frequency domain, averaged over frames and over all pixel positions.

Centering uses the per-pixel *temporal* mean of the stack, so deterministic
intensity structure (hot spots, smooth envelopes) cancels exactly in the
covariance and only genuine frame-to-frame correlation survives.  In the far
field the second region is spatially reversed through its geometric center
before correlating, turning momentum anti-correlation into a peak near zero
displacement; any sub-pixel residual moves into the fitted peak center.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .detector import FrameStack
from .source import ConfigError, Plane

_CHUNK = 256  # frames per FFT batch; fixed so the summation order never varies


class EstimatorError(RuntimeError):
    """Raised when a correlation estimate is undefined for the given data."""


class MaskError(RuntimeError):
    """Raised when the artifact mask would intersect the correlation peak."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle: origin (x0, y0), size (w, h)."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ConfigError(f"rectangle must have positive size, got {self!r}")
        if self.x0 < 0 or self.y0 < 0:
            raise ConfigError(f"rectangle origin must be non-negative, got {self!r}")

    def fits_in(self, width: int, height: int) -> bool:
        return self.x0 + self.w <= width and self.y0 + self.h <= height


@dataclass(frozen=True)
class RoiPair:
    """Two same-sized regions of interest, one per polarization spot."""

    roi1: Rect
    roi2: Rect
    plane: Plane

    def __post_init__(self):
        if (self.roi1.w, self.roi1.h) != (self.roi2.w, self.roi2.h):
            raise ConfigError("ROIs must have identical dimensions")

    def validate_against(self, stack: FrameStack) -> None:
        if Plane(stack.plane) != Plane(self.plane):
            raise ConfigError(f"ROI plane {self.plane!r} does not match stack plane {stack.plane!r}")
        for name, roi in (("roi1", self.roi1), ("roi2", self.roi2)):
            if not roi.fits_in(stack.width, stack.height):
                raise ConfigError(f"{name} {roi!r} exceeds the {stack.width}x{stack.height} sensor")


@dataclass
class CorrMap:
    """Intercorrelation values on the centered circular displacement grid.

    values[iy, ix] is F at displacement (dx, dy) = (ix - w//2, iy - h//2);
    mask marks displacements excluded from fitting.
    """

    values: np.ndarray
    mask: np.ndarray
    n_frames: int
    mean_counts: tuple[float, float]
    plane: Plane

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def center(self) -> tuple[int, int]:
        """(ix, iy) of zero displacement."""
        h, w = self.values.shape
        return w // 2, h // 2

    def delta_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (dx, dy) matching values' layout."""
        h, w = self.values.shape
        dx = np.arange(w) - w // 2
        dy = np.arange(h) - h // 2
        return np.meshgrid(dx, dy)


def _roi_series(stack: FrameStack, rois: RoiPair):
    """Counts for both ROIs, with the far-field reversal applied to the second."""
    i1 = stack.roi_counts(rois.roi1)
    i2 = stack.roi_counts(rois.roi2)
    if Plane(rois.plane) == Plane.FAR:
        i2 = i2[:, ::-1, ::-1]
    return i1, i2


def _cross_covariance(i1: np.ndarray, i2: np.ndarray,
                      mean1: np.ndarray | None = None,
                      mean2: np.ndarray | None = None) -> np.ndarray:
    """Circular cross-covariance map, temporally centered, shifted to center.

    Equivalent to averaging ifft2(conj(fft2(i1_t - m1)) * fft2(i2_t - m2))
    over frames, using the identity sum conj(G1)G2 - n conj(M1)M2 so each
    frame is transformed once.  Summation runs in fixed chunk order.

    With explicit means (the witness path, where the per-pixel means come
    from the full stack) the sample count divides directly; self-estimated
    means use the n-1 sample-covariance normalization.
    """
    n, h, w = i1.shape
    external_means = mean1 is not None
    if n < (1 if external_means else 2):
        raise EstimatorError("too few frames to estimate a covariance")
    s12 = np.zeros((h, w), dtype=np.complex128)
    s1 = np.zeros((h, w), dtype=np.complex128)
    s2 = np.zeros((h, w), dtype=np.complex128)
    for lo in range(0, n, _CHUNK):
        g1 = np.fft.fft2(i1[lo:lo + _CHUNK])
        g2 = np.fft.fft2(i2[lo:lo + _CHUNK])
        s12 += np.einsum("tij,tij->ij", np.conj(g1), g2)
        s1 += g1.sum(axis=0)
        s2 += g2.sum(axis=0)
    if external_means:
        gm1 = np.fft.fft2(mean1)
        gm2 = np.fft.fft2(mean2)
        spec = s12 - np.conj(gm1) * s2 - np.conj(s1) * gm2 + n * np.conj(gm1) * gm2
        cov = np.fft.ifft2(spec).real / (n * h * w)
    else:
        spec = s12 - np.conj(s1) * s2 / n
        cov = np.fft.ifft2(spec).real / ((n - 1) * h * w)
    return np.fft.fftshift(cov)


def _normalize(cov: np.ndarray, i1: np.ndarray, i2: np.ndarray, plane: Plane) -> CorrMap:
    m1 = float(i1.mean())
    m2 = float(i2.mean())
    denom = 0.5 * (m1 + m2)
    if denom <= 0.0:
        raise EstimatorError("mean counts are zero; normalization undefined")
    return CorrMap(
        values=cov / denom,
        mask=np.zeros(cov.shape, dtype=bool),
        n_frames=i1.shape[0],
        mean_counts=(m1, m2),
        plane=Plane(plane),
    )


def intercorrelation(stack: FrameStack, rois: RoiPair) -> CorrMap:
    """Estimate F between the two ROIs of every frame.

    Raises EstimatorError for stacks with fewer than two frames or with
    all-zero mean counts.
    """
    rois.validate_against(stack)
    if stack.n_frames == 0:
        raise EstimatorError("cannot correlate an empty stack")
    i1, i2 = _roi_series(stack, rois)
    cov = _cross_covariance(i1, i2)
    return _normalize(cov, i1, i2, rois.plane)


def witness(stack: FrameStack, rois: RoiPair) -> CorrMap:
    """Same estimator with roi2 taken from the *next* frame.

    Intra-frame pair correlation cannot survive the one-frame offset, so any
    structure left in the witness map is a deterministic artifact.  The
    per-pixel centering means come from the full stack, which keeps even a
    two-frame witness (one cross term) well defined.
    """
    rois.validate_against(stack)
    if stack.n_frames < 2:
        raise EstimatorError("witness needs at least 2 frames")
    i1, i2 = _roi_series(stack, rois)
    cov = _cross_covariance(i1[:-1], i2[1:], i1.mean(axis=0), i2.mean(axis=0))
    out = _normalize(cov, i1, i2, rois.plane)
    out.n_frames = stack.n_frames - 1
    return out


# ---------------------------------------------------------------------------
# Artifact mask
# ---------------------------------------------------------------------------
def _wrap(d: int, size: int) -> int:
    """Wrap an unwrapped displacement onto the centered circular grid."""
    return (d + size // 2) % size - size // 2


def build_mask(cmap: CorrMap, rois: RoiPair, smear_axis: str | None = "y",
               mask_radius: int = 3, fit_halfwidth: int = 7) -> CorrMap:
    """Mask detector artifacts out of a correlation map.

    Two artifacts are masked, both tied to ROI pixels that coincide on the
    sensor (possible only in the near field, where the ROIs may overlap):

    * the autocorrelation peak, a disk of `mask_radius` at the displacement
      mapping roi1 onto roi2, masked when the ROIs overlap in both axes;
    * the readout-smear line, one displacement column through that position
      (smear acts along +y), masked whenever the ROI columns overlap.

    Raises MaskError when the mask would cut into the fit window
    (half-width `fit_halfwidth`) around the correlation peak.
    """
    h, w = cmap.shape
    mask = cmap.mask.copy()
    if Plane(rois.plane) == Plane.NEAR:
        auto_dx = rois.roi1.x0 - rois.roi2.x0
        auto_dy = rois.roi1.y0 - rois.roi2.y0
        x_overlap = abs(auto_dx) < rois.roi1.w
        y_overlap = abs(auto_dy) < rois.roi1.h
        cx, cy = cmap.center
        if x_overlap and smear_axis == "y":
            mask[:, cx + _wrap(auto_dx, w)] = True
        if x_overlap and y_overlap:
            dx, dy = cmap.delta_grid()
            ddx = np.minimum(np.abs(dx - _wrap(auto_dx, w)), w - np.abs(dx - _wrap(auto_dx, w)))
            ddy = np.minimum(np.abs(dy - _wrap(auto_dy, h)), h - np.abs(dy - _wrap(auto_dy, h)))
            mask |= ddx**2 + ddy**2 <= mask_radius**2

    out = replace(cmap, mask=mask)
    if mask.any():
        _check_mask_clearance(out, fit_halfwidth)
    return out


def _check_mask_clearance(cmap: CorrMap, fit_halfwidth: int) -> None:
    """Reject masks that touch the fit window around the unmasked peak."""
    values = np.where(cmap.mask, -np.inf, np.abs(cmap.values))
    iy, ix = np.unravel_index(int(np.argmax(values)), cmap.shape)
    h, w = cmap.shape
    my, mx = np.nonzero(cmap.mask)
    ddx = np.minimum(np.abs(mx - ix), w - np.abs(mx - ix))
    ddy = np.minimum(np.abs(my - iy), h - np.abs(my - iy))
    if np.any((ddx <= fit_halfwidth) & (ddy <= fit_halfwidth)):
        raise MaskError(
            "artifact mask intersects the fit window around the correlation peak; "
            "separate the ROIs or shrink the window"
        )


# ---------------------------------------------------------------------------
# Variance of the difference
# ---------------------------------------------------------------------------
def variance_of_difference(stack: FrameStack, rois: RoiPair, bin: int = 8) -> float:
    """Variance of (N1 - N2) over bin x bin superpixels, in shot-noise units.

    Counts are aggregated into superpixels (far field: roi2 reversed first)
    and the variance of the difference is measured against the shot-noise
    reference Var(N1) + Var(N2), both from per-superpixel temporal sample
    statistics:

        ratio = Var(N1 - N2) / (Var(N1) + Var(N2))
              = 1 - 2 Cov(N1, N2) / (Var(N1) + Var(N2))

    For ideal photon counting Var(N) equals the mean count, which recovers
    the textbook <(N1-N2)^2>/<N1+N2> form; estimating the reference from the
    data keeps the ratio exactly 1 for uncorrelated stacks even when
    thresholding (sub-Poissonian pixels) or readout smear (super-Poissonian
    superpixels) distort the variance-to-mean ratio.  Centering on temporal
    means removes deterministic envelope mismatch between the arms.  Pair
    correlation pushes the ratio below 1; 1 - ratio approaches the total
    correlation coefficient once the superpixel side well exceeds the
    correlation width.
    """
    rois.validate_against(stack)
    if stack.n_frames < 2:
        raise EstimatorError("variance of difference needs at least 2 frames")
    if bin < 1 or rois.roi1.w % bin or rois.roi1.h % bin:
        raise ConfigError(f"bin={bin} must be >= 1 and divide the ROI dimensions "
                          f"({rois.roi1.w}x{rois.roi1.h})")
    i1, i2 = _roi_series(stack, rois)
    n, h, w = i1.shape

    def superpix(a: np.ndarray) -> np.ndarray:
        return a.reshape(n, h // bin, bin, w // bin, bin).sum(axis=(2, 4))

    c1 = superpix(i1)
    c2 = superpix(i2)
    c1 = c1 - c1.mean(axis=0)
    c2 = c2 - c2.mean(axis=0)
    num = float(((c1 - c2) ** 2).sum())
    ref = float((c1**2).sum() + (c2**2).sum())
    if num == 0.0:
        return 0.0
    if ref <= 0.0:
        raise EstimatorError("shot-noise reference is zero; stack is constant")
    return num / ref
