"""Independent brute-force references used by the tests.

Everything here is deliberately naive (explicit displacement loops, no
frequency-domain tricks) so it can serve as an oracle for the production
estimators.
"""

from __future__ import annotations

import numpy as np

from twinpix.detector import FrameStack
from twinpix.source import Plane


def pack_stack(bits: np.ndarray, plane=Plane.NEAR, seed: int = 0) -> FrameStack:
    """FrameStack from an unpacked (n, h, w) binary array."""
    bits = np.asarray(bits, dtype=np.uint8)
    n, h, w = bits.shape
    if n == 0:
        packed = np.zeros((0, h, (w + 7) // 8), dtype=np.uint8)
    else:
        packed = np.stack([np.packbits(f, axis=-1) for f in bits])
    return FrameStack(plane=Plane(plane), width=w, height=h, seed=seed, packed=packed)


def direct_intercorrelation(i1: np.ndarray, i2: np.ndarray) -> np.ndarray:
    """O(w^2 h^2) circular cross-covariance estimate of F.

    Same definition as the production estimator: per-pixel temporal-mean
    centering, averaging over frames and all (periodized) positions,
    normalization by the mean of the two per-pixel count rates, and a
    centered displacement layout.
    """
    i1 = np.asarray(i1, dtype=float)
    i2 = np.asarray(i2, dtype=float)
    n, h, w = i1.shape
    a = i1 - i1.mean(axis=0)
    b = i2 - i2.mean(axis=0)
    cov = np.zeros((h, w))
    for dy in range(h):
        for dx in range(w):
            total = 0.0
            shifted = np.roll(np.roll(b, -dy, axis=1), -dx, axis=2)
            total = float((a * shifted).sum())
            cov[dy, dx] = total
    cov /= (n - 1) * h * w
    # centered layout without touching the fft module
    cov = np.roll(np.roll(cov, h // 2, axis=0), w // 2, axis=1)
    denom = 0.5 * (i1.mean() + i2.mean())
    return cov / denom


def gaussian_map(shape, amplitude, center, sigma, baseline=0.0):
    """Synthetic peak on the centered displacement grid."""
    h, w = shape
    dx = np.arange(w) - w // 2
    dy = np.arange(h) - h // 2
    gx, gy = np.meshgrid(dx, dy)
    return baseline + amplitude * np.exp(
        -((gx - center[0]) ** 2) / (2 * sigma[0] ** 2)
        - ((gy - center[1]) ** 2) / (2 * sigma[1] ** 2)
    )
