"""Atomic file writes and binary PGM/PPM encoding."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write(path, data: bytes | str) -> Path:
    """Write to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def pgm_bytes(values) -> bytes:
    """8-bit P5 image from a 2D array in [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"PGM needs a 2D array, got shape {v.shape}")
    px = np.rint(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def ppm_bytes(image) -> bytes:
    """8-bit P6 image from ``[H, W, C]``, each channel mapped min..max -> 0..255.

    Only the first three channels are used; fewer are repeated. A flat channel
    maps to 0.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"PPM needs an [H, W, C] array, got shape {x.shape}")
    x = x[:, :, [i % x.shape[2] for i in range(3)]]
    lo = x.min(axis=(0, 1), keepdims=True)
    span = x.max(axis=(0, 1), keepdims=True) - lo
    scaled = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)
    px = np.rint(scaled * 255.0).astype(np.uint8)
    h, w, _ = px.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def read_pnm(data: bytes) -> np.ndarray:
    """Decode the P5/P6 files written above (single-space headers, maxval 255)."""
    magic, dims, maxval, body = data.split(b"\n", 3)
    w, h = (int(v) for v in dims.split())
    if int(maxval) != 255:
        raise ValueError("only 8-bit images are supported")
    px = np.frombuffer(body, dtype=np.uint8)
    if magic == b"P5":
        return px.reshape(h, w)
    if magic == b"P6":
        return px.reshape(h, w, 3)
    raise ValueError(f"unsupported magic {magic!r}")
