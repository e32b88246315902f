"""Closed-form inversion of the noiseless synthetic radar model."""
from __future__ import annotations

import numpy as np

from ..raster import Raster2D
from ..simworld import REF_INC_DEG, VV_OFFSET, VV_PER_DEG, VV_PER_NDVI, VV_PER_SMC


def baseline_invert(vv_db, ndvi, inc, theta_r: float = 0.05, theta_s: float = 0.45):
    """SMC from VV backscatter, NDVI and incidence angle.

    Accepts arrays or Raster2D (returning the same kind as ``vv_db``).
    """
    as_raster = isinstance(vv_db, Raster2D)
    vv = vv_db.values if as_raster else vv_db
    nd = ndvi.values if isinstance(ndvi, Raster2D) else ndvi
    ia = inc.values if isinstance(inc, Raster2D) else inc
    vv = np.asarray(vv, dtype=np.float64)
    theta = (vv - VV_OFFSET - VV_PER_NDVI * np.maximum(0.0, np.asarray(nd, dtype=np.float64))
             - VV_PER_DEG * (np.asarray(ia, dtype=np.float64) - REF_INC_DEG)) / VV_PER_SMC
    theta = np.clip(theta, theta_r, theta_s)
    if as_raster:
        return vv_db.with_values(theta.astype(np.float32))
    return theta
