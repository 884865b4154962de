"""Thresholded photon-counting detector.

Continuous photon events become binary frames: each event survives with the
quantum efficiency, lands on the nearest pixel (round half away from zero),
may smear one row toward the readout register, and every pixel can flip on
spuriously.  Multiple hits saturate to 1, which is what keeps the useful
operating range at a fluence of 0.1-0.2 counts per pixel.

Frames are stored bit-packed (one bit per pixel, rows padded to whole
bytes), so a 10^4-frame 512x512 stack stays around 330 MB.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .source import ConfigError, PhotonEvents, Plane

FLUENCE_LO = 0.1
FLUENCE_HI = 0.2


@dataclass(frozen=True)
class DetectorParams:
    """Threshold-detector model: three rates and the sensor size.

    quantum_efficiency : probability that an incident photon is detected.
    false_count_prob   : per-pixel per-frame probability of a spurious count
                         (clock-induced charge, threshold false positive).
    smear_prob         : probability that a detection also sets the pixel one
                         row toward the readout register (+y).
    """

    quantum_efficiency: float
    false_count_prob: float = 0.0
    smear_prob: float = 0.0
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not 0.0 < self.quantum_efficiency <= 1.0:
            raise ConfigError(f"quantum_efficiency must be in (0, 1], got {self.quantum_efficiency!r}")
        if not 0.0 <= self.false_count_prob < 1.0:
            raise ConfigError(f"false_count_prob must be in [0, 1), got {self.false_count_prob!r}")
        if not 0.0 <= self.smear_prob < 1.0:
            raise ConfigError(f"smear_prob must be in [0, 1), got {self.smear_prob!r}")
        if self.width * self.height <= 0:
            raise ConfigError("sensor must have at least one pixel")


@dataclass
class Frame:
    """One binary frame; bits[y, x] = 1 means at least one detection."""

    bits: np.ndarray
    frame_index: int = 0
    n_clipped: int = 0

    @property
    def fluence(self) -> float:
        return float(self.bits.mean())


def _round_half_away(a: np.ndarray) -> np.ndarray:
    """Round half away from zero (np.round would round half to even)."""
    return np.trunc(a + np.copysign(0.5, a)).astype(np.int64)


def rasterize(events: PhotonEvents, d: DetectorParams, rng: np.random.Generator,
              frame_index: int = 0) -> Frame:
    """Detect events onto a binary frame.

    Out-of-bounds events are clipped (counted in Frame.n_clipped), never
    wrapped.  The random-draw order is fixed: survival mask, one smear draw
    per set pixel (unique pixels in row-major order), then the false-count
    field, so frames are bit-reproducible for a given stream.
    """
    bits = np.zeros((d.height, d.width), dtype=np.uint8)
    n = len(events)
    n_clipped = 0
    if n > 0:
        keep = rng.random(n) < d.quantum_efficiency
        ix = _round_half_away(events.x[keep])
        iy = _round_half_away(events.y[keep])
        inside = (ix >= 0) & (ix < d.width) & (iy >= 0) & (iy < d.height)
        n_clipped = int(inside.size - inside.sum())
        flat = iy[inside] * d.width + ix[inside]
        bits.ravel()[flat] = 1
        if d.smear_prob > 0.0 and flat.size:
            hit = np.unique(flat)
            smeared = hit[rng.random(hit.size) < d.smear_prob]
            below = smeared + d.width
            below = below[below < d.width * d.height]
            bits.ravel()[below] = 1
    if d.false_count_prob > 0.0:
        bits |= (rng.random((d.height, d.width)) < d.false_count_prob).astype(np.uint8)
    return Frame(bits=bits, frame_index=frame_index, n_clipped=n_clipped)


# ---------------------------------------------------------------------------
# Stacks
# ---------------------------------------------------------------------------
@dataclass
class FrameStack:
    """Ordered set of equal-sized binary frames, stored bit-packed.

    packed has shape (n_frames, height, ceil(width/8)), MSB-first within each
    byte, rows padded to whole bytes.
    """

    plane: Plane
    width: int
    height: int
    seed: int
    packed: np.ndarray
    n_clipped: int = 0

    @property
    def n_frames(self) -> int:
        return self.packed.shape[0]

    @classmethod
    def empty(cls, plane: Plane, width: int, height: int, seed: int) -> "FrameStack":
        packed = np.zeros((0, height, (width + 7) // 8), dtype=np.uint8)
        return cls(plane=Plane(plane), width=width, height=height, seed=seed, packed=packed)

    @classmethod
    def from_frames(cls, frames, plane: Plane, seed: int = 0) -> "FrameStack":
        frames = list(frames)
        if not frames:
            raise ConfigError("cannot build a stack from zero frames; use FrameStack.empty")
        h, w = frames[0].bits.shape
        packed = np.stack([np.packbits(f.bits, axis=-1) for f in frames])
        clipped = sum(f.n_clipped for f in frames)
        return cls(plane=Plane(plane), width=w, height=h, seed=seed, packed=packed, n_clipped=clipped)

    def frames(self, index) -> np.ndarray:
        """Unpack frames at `index` (int, slice, or index array) to uint8 (k, h, w)."""
        sel = self.packed[index]
        if sel.ndim == 2:
            sel = sel[None]
        return np.unpackbits(sel, axis=-1, count=self.width)

    def frame(self, i: int) -> np.ndarray:
        return self.frames(i)[0]

    def roi_counts(self, rect) -> np.ndarray:
        """Float64 counts of shape (n_frames, rect.h, rect.w) for one ROI."""
        out = np.empty((self.n_frames, rect.h, rect.w), dtype=np.float64)
        step = 256
        for lo in range(0, self.n_frames, step):
            hi = min(lo + step, self.n_frames)
            blk = self.frames(slice(lo, hi))
            out[lo:hi] = blk[:, rect.y0:rect.y0 + rect.h, rect.x0:rect.x0 + rect.w]
        return out


@dataclass(frozen=True)
class FluenceReport:
    """Mean fluence with the operating-regime flag."""

    value: float
    in_regime: bool

    def __float__(self) -> float:
        return self.value


def check_fluence(stack: FrameStack, roi=None) -> FluenceReport:
    """Mean fluence over all frames (restricted to `roi` when given).

    Flags values outside the photon-counting operating range
    [0.1, 0.2] counts per pixel.
    """
    if stack.n_frames == 0:
        raise ConfigError("fluence of an empty stack is undefined")
    total = 0.0
    npix = 0
    step = 256
    for lo in range(0, stack.n_frames, step):
        blk = stack.frames(slice(lo, min(lo + step, stack.n_frames)))
        if roi is not None:
            blk = blk[:, roi.y0:roi.y0 + roi.h, roi.x0:roi.x0 + roi.w]
        total += float(blk.sum())
        npix += blk.size
    value = total / npix
    return FluenceReport(value=value, in_regime=FLUENCE_LO <= value <= FLUENCE_HI)
