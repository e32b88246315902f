"""Point-wise forecast scores."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import UndefinedMetricError, ValidationError


@dataclass(frozen=True)
class MetricRow:
    rmse: float
    mae: float
    r2: float
    pearson: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


def metrics(pred, truth) -> MetricRow:
    """RMSE, MAE, R² and Pearson r over paired values.

    Pairs where either side is NaN are dropped first. R² is undefined when
    the truth has zero variance; Pearson r is reported as NaN when either
    side is constant.
    """
    p = np.asarray(pred, dtype=np.float64).ravel()
    y = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValidationError(f"length mismatch: {p.size} predictions vs {y.size} truth values")
    keep = ~(np.isnan(p) | np.isnan(y))
    p, y = p[keep], y[keep]
    if p.size < 2:
        raise ValidationError(f"need at least 2 valid pairs, got {p.size}")
    e = p - y
    sse = float(np.sum(e * e))
    rmse = math.sqrt(sse / e.size)
    mae = float(np.mean(np.abs(e)))
    yc = y - y.mean()
    sst = float(np.sum(yc * yc))
    if sst == 0.0:
        raise UndefinedMetricError("truth has zero variance, R² is undefined")
    r2 = 1.0 - sse / sst
    pc = p - p.mean()
    denom = math.sqrt(float(np.sum(pc * pc)) * sst)
    r = float(np.clip(np.sum(pc * yc) / denom, -1.0, 1.0)) if denom > 0 else float("nan")
    # float rounding can leave rmse a hair under mae when every |e| is equal
    return MetricRow(max(rmse, mae), mae, r2, r, int(e.size))
