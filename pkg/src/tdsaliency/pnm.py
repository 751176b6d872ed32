"""Minimal binary PGM (P5) reader and writer, 8- and 16-bit."""

import re

import numpy as np

_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def read_pgm(path):
    """Return the pixel array of a P5 file (uint8 or uint16)."""
    with open(path, "rb") as fh:
        data = fh.read()
    m = _HEADER.match(data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=m.end())
    if raw.size != count:
        raise ValueError(f"{path}: truncated pixel data")
    return raw.reshape(height, width).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pgm(path, pixels, maxval=None):
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("PGM data must be 2-D")
    if maxval is None:
        maxval = 65535 if pixels.dtype == np.uint16 else 255
    dtype = ">u2" if maxval > 255 else "u1"
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (width, height, maxval))
        fh.write(pixels.astype(dtype).tobytes())
