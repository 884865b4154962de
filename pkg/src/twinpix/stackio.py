"""On-disk formats: the BPI1 frame-stack container and correlation maps.

BPI1 container (all integers little-endian), 32-byte header::

    offset  size  field
         0     4  magic "BPI1"
         4     2  version (currently 1)
         6     2  reserved (0)
         8     4  width   [px]
        12     4  height  [px]
        16     4  n_frames
        20     1  plane (0 = near field, 1 = far field)
        21     1  packing (0 = 1 bit/pixel, row-major, rows padded to bytes,
                           MSB first)
        22     2  reserved (0)
        24     8  seed
        32     -  payload: n_frames * height * ceil(width/8) bytes

Correlation maps are written twice: a plain-text CSV (one line per
displacement row, '#' metadata comments) and a binary file of float64
little-endian values with an 8-value header
(magic, w, h, n_frames, plane, mean1, mean2, 0); the validity mask goes to
its own 0/1 CSV.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .correlator import CorrMap
from .detector import FrameStack
from .source import Plane

MAGIC = b"BPI1"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIIBBHQ")
HEADER_SIZE = _HEADER.size  # 32 bytes

CORRMAP_MAGIC = float(int.from_bytes(b"BPC1", "little"))


class FormatError(ValueError):
    """Raised for malformed or inconsistent container files."""


def _bytes_per_frame(width: int, height: int) -> int:
    return height * ((width + 7) // 8)


class StackWriter:
    """Incremental BPI1 writer so paper-scale stacks never sit in memory.

    The frame count is patched into the header on close; output is
    byte-identical for identical frame sequences.
    """

    def __init__(self, path, plane: Plane, width: int, height: int, seed: int):
        self.path = Path(path)
        self.plane = Plane(plane)
        self.width = width
        self.height = height
        self.seed = seed
        self.n_frames = 0
        self._fh = open(self.path, "wb")
        self._write_header()

    def _write_header(self):
        self._fh.write(_HEADER.pack(
            MAGIC, VERSION, 0, self.width, self.height, self.n_frames,
            int(self.plane), 0, 0, self.seed & (2**64 - 1),
        ))

    def write_bits(self, bits: np.ndarray) -> None:
        """Append one unpacked binary frame of shape (height, width)."""
        if bits.shape != (self.height, self.width):
            raise FormatError(f"frame shape {bits.shape} does not match container "
                              f"{self.height}x{self.width}")
        self._fh.write(np.packbits(bits.astype(np.uint8), axis=-1).tobytes())
        self.n_frames += 1

    def write_packed(self, packed: np.ndarray) -> None:
        """Append already-packed frames of shape (k, height, ceil(width/8))."""
        self._fh.write(packed.tobytes())
        self.n_frames += packed.shape[0]

    def close(self) -> None:
        self._fh.seek(0)
        self._write_header()
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_stack(stack: FrameStack, path) -> Path:
    """Write a whole in-memory stack; returns the path."""
    with StackWriter(path, stack.plane, stack.width, stack.height, stack.seed) as writer:
        if stack.n_frames:
            writer.write_packed(stack.packed)
    return Path(path)


def read_stack(path) -> FrameStack:
    """Read a BPI1 container, rejecting any header/payload inconsistency."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, _, width, height, n_frames, plane, packing, _, seed = \
        _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if packing != 0:
        raise FormatError(f"{path}: unsupported packing {packing}")
    if plane not in (0, 1):
        raise FormatError(f"{path}: invalid plane tag {plane}")
    expected = n_frames * _bytes_per_frame(width, height)
    payload = raw[HEADER_SIZE:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(
        n_frames, height, (width + 7) // 8).copy()
    return FrameStack(plane=Plane(plane), width=width, height=height,
                      seed=seed, packed=packed)


# ---------------------------------------------------------------------------
# Correlation maps
# ---------------------------------------------------------------------------
def write_corrmap_bin(cmap: CorrMap, path) -> Path:
    path = Path(path)
    h, w = cmap.shape
    header = np.array([CORRMAP_MAGIC, w, h, cmap.n_frames, int(cmap.plane),
                       cmap.mean_counts[0], cmap.mean_counts[1], 0.0], dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(cmap.values.astype("<f8").tobytes())
    return path


def read_corrmap_bin(path) -> CorrMap:
    path = Path(path)
    raw = np.frombuffer(path.read_bytes(), dtype="<f8")
    if raw.size < 8 or raw[0] != CORRMAP_MAGIC:
        raise FormatError(f"{path}: not a correlation-map file")
    w, h, n_frames, plane = (int(raw[i]) for i in range(1, 5))
    if raw.size != 8 + w * h:
        raise FormatError(f"{path}: expected {w}x{h} values, found {raw.size - 8}")
    values = raw[8:].reshape(h, w).copy()
    return CorrMap(values=values, mask=np.zeros((h, w), dtype=bool),
                   n_frames=n_frames, mean_counts=(float(raw[5]), float(raw[6])),
                   plane=Plane(plane))


def write_corrmap_csv(cmap: CorrMap, path) -> Path:
    path = Path(path)
    h, w = cmap.shape
    buf = io.StringIO()
    buf.write(f"# width={w} height={h} n_frames={cmap.n_frames} plane={int(cmap.plane)}\n")
    buf.write(f"# mean_counts={cmap.mean_counts[0]!r},{cmap.mean_counts[1]!r}\n")
    np.savetxt(buf, cmap.values, fmt="%.17g", delimiter=",")
    path.write_text(buf.getvalue())
    return path


def read_corrmap_csv(path) -> CorrMap:
    path = Path(path)
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for token in line[1:].split():
                if "=" in token:
                    key, value = token.split("=", 1)
                    meta[key] = value
    values = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    try:
        n_frames = int(meta["n_frames"])
        plane = Plane(int(meta["plane"]))
        m1, m2 = (float(v) for v in meta["mean_counts"].split(","))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: missing or malformed metadata comments") from exc
    return CorrMap(values=values, mask=np.zeros(values.shape, dtype=bool),
                   n_frames=n_frames, mean_counts=(m1, m2), plane=plane)


def write_mask_csv(cmap: CorrMap, path) -> Path:
    path = Path(path)
    buf = io.StringIO()
    np.savetxt(buf, cmap.mask.astype(np.uint8), fmt="%d", delimiter=",")
    path.write_text(buf.getvalue())
    return path


def read_mask_csv(path) -> np.ndarray:
    return np.loadtxt(Path(path), delimiter=",", dtype=np.uint8, ndmin=2).astype(bool)
