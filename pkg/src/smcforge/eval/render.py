"""Wet-to-dry heatmaps written as 8-bit RGB PNG."""
from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ArgumentError
from ..raster import Raster2D

WET_RGB = (30, 60, 255)
DRY_RGB = (220, 40, 30)
NAN_RGB = (128, 128, 128)


def heatmap_rgb(values, lo: float, hi: float) -> np.ndarray:
    """(H, W) values -> (H, W, 3) uint8; ``lo`` is dry (red), ``hi`` wet (blue)."""
    if not lo < hi:
        raise ArgumentError(f"need lo < hi, got lo={lo}, hi={hi}")
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ArgumentError(f"heatmap needs a 2-D map, got shape {v.shape}")
    nan = np.isnan(v)
    t = (np.clip(np.where(nan, lo, v), lo, hi) - lo) / (hi - lo)
    dry = np.array(DRY_RGB, np.float64)
    wet = np.array(WET_RGB, np.float64)
    rgb = np.rint(dry + t[..., None] * (wet - dry))
    rgb[nan] = NAN_RGB
    return rgb.astype(np.uint8)


def png_bytes(rgb: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8)).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def render_heatmap(smc_map, lo: float, hi: float, path) -> Path:
    """Write ``smc_map`` (Raster2D or 2-D array) as a PNG heatmap."""
    values = smc_map.values if isinstance(smc_map, Raster2D) else smc_map
    data = png_bytes(heatmap_rgb(values, lo, hi))
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
