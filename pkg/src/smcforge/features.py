"""Radiometric preprocessing and the fixed 14-channel feature stack."""
from __future__ import annotations

import datetime as dt
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArgumentError, ValidationError
from .raster import (
    FEATURE_CHANNELS,
    GROUND_CHANNELS,
    POLARIZATION_CHANNELS,
    ChannelId,
    GridGeo,
    Raster2D,
    RasterStack,
)

DB_FLOOR = -60.0
LINEAR_FLOOR = 1e-6
DEFAULT_REF_DEG = 35.0
DEFAULT_CROP_THRESHOLD = 0.3
YEAR_DAYS = 365.25
DEFAULT_IDW_POWER = 8.0

_FEATURE_INDEX = {c: i for i, c in enumerate(FEATURE_CHANNELS)}


class Mode(str, enum.Enum):
    AE = "AE"        # EO only: ground channels zeroed
    FUSED = "FUSED"


def _same_geo(*rasters: Raster2D) -> GridGeo:
    geo = rasters[0].geo
    for r in rasters[1:]:
        if r.geo != geo:
            raise ArgumentError("rasters are on different grids")
    return geo


def ndvi_array(nir: np.ndarray, red: np.ndarray) -> np.ndarray:
    nir = np.asarray(nir, dtype=np.float32)
    red = np.asarray(red, dtype=np.float32)
    den = nir + red
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den != 0, (nir - red) / den, np.nan)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def ndvi(nir: Raster2D, red: Raster2D) -> Raster2D:
    """(NIR - RED) / (NIR + RED); NaN where either band is NaN or the sum is zero."""
    geo = _same_geo(nir, red)
    return Raster2D(geo, ndvi_array(nir.values, red.values))


def to_db(sigma0_linear: Raster2D) -> Raster2D:
    """Linear backscatter to decibels, floored at -60 dB."""
    x = sigma0_linear.values
    if (x < 0).any():
        raise ArgumentError("linear backscatter must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        db = np.where(x <= LINEAR_FLOOR, DB_FLOOR, 10.0 * np.log10(x.astype(np.float64)))
    db = np.where(np.isnan(x), np.nan, db)
    return sigma0_linear.with_values(db.astype(np.float32))


def from_db(sigma_db: Raster2D) -> Raster2D:
    return sigma_db.with_values((10.0 ** (sigma_db.values.astype(np.float64) / 10.0)).astype(np.float32))


def incidence_normalize_array(sigma_db, inc_deg, ref_deg: float = DEFAULT_REF_DEG) -> np.ndarray:
    sigma_db = np.asarray(sigma_db, dtype=np.float32)
    inc = np.asarray(inc_deg, dtype=np.float64)
    finite = inc[~np.isnan(inc)]
    if ((finite <= 0) | (finite >= 90)).any():
        raise ArgumentError("incidence angle must lie strictly between 0 and 90 degrees")
    if not 0 < ref_deg < 90:
        raise ArgumentError(f"reference angle {ref_deg} outside (0, 90)")
    corr = 10.0 * np.log10(math.cos(math.radians(ref_deg)) ** 2 / np.cos(np.radians(inc)) ** 2)
    return (sigma_db + corr).astype(np.float32)


def incidence_normalize(sigma_db: Raster2D, inc_deg: Raster2D, ref_deg: float = DEFAULT_REF_DEG) -> Raster2D:
    """Cosine-squared correction of backscatter to a reference incidence angle."""
    geo = _same_geo(sigma_db, inc_deg)
    return Raster2D(geo, incidence_normalize_array(sigma_db.values, inc_deg.values, ref_deg))


def crop_mask(ndvi_map: Raster2D, threshold: float = DEFAULT_CROP_THRESHOLD) -> Raster2D:
    if not -1.0 <= threshold <= 1.0:
        raise ArgumentError(f"threshold {threshold} outside [-1, 1]")
    v = ndvi_map.values
    mask = np.where(np.isnan(v), np.nan, (v >= threshold).astype(np.float32))
    return ndvi_map.with_values(mask)


def doy_of(day: dt.date | int) -> int:
    if not isinstance(day, dt.date):
        day = dt.date(1970, 1, 1) + dt.timedelta(days=int(day))
    return day.timetuple().tm_yday


def doy_encoding(doy: float) -> tuple[float, float]:
    angle = 2.0 * math.pi * float(doy) / YEAR_DAYS
    return math.sin(angle), math.cos(angle)


@dataclass(frozen=True)
class ChannelStat:
    mean: float
    std: float

    @property
    def constant(self) -> bool:
        return self.std == 0.0


class ChannelStats(dict):
    """Per-channel training mean/std, keyed by ChannelId."""

    def to_json(self) -> dict:
        return {str(c): {"mean": s.mean, "std": s.std, "constant": s.constant} for c, s in self.items()}

    @classmethod
    def from_json(cls, doc: Mapping) -> "ChannelStats":
        out = cls()
        for name, v in doc.items():
            std = float(v["std"])
            if std < 0:
                raise ValidationError(f"negative std for {name}")
            out[ChannelId(name)] = ChannelStat(float(v["mean"]), std)
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ChannelStats":
        return cls.from_json(json.loads(Path(path).read_text()))

    def require(self, channels=FEATURE_CHANNELS) -> None:
        missing = [str(c) for c in channels if c not in self]
        if missing:
            raise ValidationError(f"channel stats missing {', '.join(missing)}")


def compute_stats(raw: np.ndarray) -> ChannelStats:
    """Mean/std per channel of a (..., 14, H, W) raw cube, ignoring NaN cells."""
    stats = ChannelStats()
    for c, i in _FEATURE_INDEX.items():
        v = raw[..., i, :, :].astype(np.float64)
        v = v[~np.isnan(v)]
        if v.size == 0:
            stats[c] = ChannelStat(0.0, 0.0)
            continue
        mean = float(v.mean())
        std = float(v.std())
        if std < 1e-12 * max(1.0, abs(mean)):
            std = 0.0
        stats[c] = ChannelStat(mean, std)
    return stats


def normalize(raw: np.ndarray, stats: ChannelStats, mode: Mode | str) -> np.ndarray:
    """Impute NaN with the training mean, z-score, and zero ground channels in AE mode.

    ``raw`` is (..., 14, H, W) in the fixed channel order.
    """
    mode = Mode(mode)
    stats.require()
    out = np.empty(raw.shape, dtype=np.float32)
    for c, i in _FEATURE_INDEX.items():
        s = stats[c]
        x = raw[..., i, :, :]
        if (mode is Mode.AE and c in GROUND_CHANNELS) or s.constant:
            out[..., i, :, :] = 0.0
            continue
        x = np.where(np.isnan(x), np.float32(s.mean), x)
        out[..., i, :, :] = (x - np.float32(s.mean)) / np.float32(s.std)
    return out


def assemble_stack(inputs: Mapping[ChannelId, Raster2D], date: dt.date | int, stats: ChannelStats,
                   mode: Mode | str) -> RasterStack:
    """Build the normalized 14-channel stack for one day.

    ``inputs`` holds whatever physical planes are available (dB backscatter,
    incidence, reflectances, ground planes). NDVI is derived from NIR/RED when
    absent; the seasonal clock is derived from ``date``. Missing planes are
    imputed with the training mean, and each imputation is listed in ``notes``.
    """
    if not inputs:
        raise ArgumentError("no input planes")
    inputs = {ChannelId(c): r for c, r in inputs.items()}
    geo = _same_geo(*inputs.values())
    stats.require()
    mode = Mode(mode)
    H, W = geo.shape
    raw = np.full((len(FEATURE_CHANNELS), H, W), np.nan, dtype=np.float32)
    for c, r in inputs.items():
        if c in _FEATURE_INDEX:
            raw[_FEATURE_INDEX[c]] = r.values
    if ChannelId.NDVI not in inputs and ChannelId.NIR in inputs and ChannelId.RED in inputs:
        raw[_FEATURE_INDEX[ChannelId.NDVI]] = ndvi_array(inputs[ChannelId.NIR].values, inputs[ChannelId.RED].values)
    s, co = doy_encoding(doy_of(date))
    raw[_FEATURE_INDEX[ChannelId.DOY_SIN]] = s
    raw[_FEATURE_INDEX[ChannelId.DOY_COS]] = co
    notes = []
    for c in FEATURE_CHANNELS:
        if mode is Mode.AE and c in GROUND_CHANNELS:
            continue
        if np.isnan(raw[_FEATURE_INDEX[c]]).all():
            kind = "polarization" if c in POLARIZATION_CHANNELS else "channel"
            notes.append(f"{c}: {kind} not acquired, imputed with training mean")
    z = normalize(raw, stats, mode)
    day = date if isinstance(date, int) else (date - dt.date(1970, 1, 1)).days
    return RasterStack(day, tuple((c, Raster2D(geo, z[i])) for c, i in _FEATURE_INDEX.items()), notes=tuple(notes))


def idw_weights(geo: GridGeo, sites_xy: np.ndarray, power: float = 2.0) -> np.ndarray:
    """(H*W, S) inverse-distance weights.

    A pixel holding a site weights it by 1e12, so it takes that site's value
    to f32 precision yet falls back to its neighbours when the site is NaN.
    """
    H, W = geo.shape
    yy, xx = np.mgrid[0:H, 0:W]
    d2 = (xx.reshape(-1, 1) - sites_xy[:, 0]) ** 2 + (yy.reshape(-1, 1) - sites_xy[:, 1]) ** 2
    d2 = d2.astype(np.float64)
    return np.where(d2 > 0, 1.0 / np.maximum(d2, 1.0) ** (power / 2.0), 1e12)


def interpolate_sites(values: np.ndarray, weights: np.ndarray, geo: GridGeo) -> np.ndarray:
    """IDW planes from per-site values (D, S); NaN sites are skipped."""
    valid = ~np.isnan(values)
    v = np.where(valid, values, 0.0).astype(np.float64)
    num = v @ weights.T
    den = valid.astype(np.float64) @ weights.T
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / den, np.nan)
    return out.reshape((values.shape[0],) + geo.shape).astype(np.float32)


def raw_feature_cube(aligned, incidence_ref_deg: float | None = DEFAULT_REF_DEG,
                     idw_power: float = DEFAULT_IDW_POWER) -> np.ndarray:
    """(D, 14, H, W) physical feature planes before imputation and scaling.

    ``aligned`` is an :class:`~smcforge.ingest.AlignedDataset`. SMC_LAG is
    spread from the sites by inverse-distance weighting; the steep default
    power keeps the pixels around a site close to that site's own reading.
    """
    D = len(aligned.days)
    H, W = aligned.geo.shape
    raw = np.full((D, len(FEATURE_CHANNELS), H, W), np.nan, dtype=np.float32)
    for c in FEATURE_CHANNELS:
        plane = aligned.eo_plane(c)
        if plane is not None:
            raw[:, _FEATURE_INDEX[c]] = plane
    inc = aligned.eo_plane(ChannelId.INC_DEG)
    if incidence_ref_deg is not None and inc is not None:
        for c in POLARIZATION_CHANNELS:
            i = _FEATURE_INDEX[c]
            raw[:, i] = incidence_normalize_array(raw[:, i], inc, incidence_ref_deg)
    nir, red = aligned.eo_plane(ChannelId.NIR), aligned.eo_plane(ChannelId.RED)
    if aligned.eo_plane(ChannelId.NDVI) is None and nir is not None and red is not None:
        raw[:, _FEATURE_INDEX[ChannelId.NDVI]] = ndvi_array(nir, red)
    enc = np.array([doy_encoding(doy_of(int(d))) for d in aligned.days], dtype=np.float32)
    raw[:, _FEATURE_INDEX[ChannelId.DOY_SIN]] = enc[:, 0, None, None]
    raw[:, _FEATURE_INDEX[ChannelId.DOY_COS]] = enc[:, 1, None, None]
    raw[:, _FEATURE_INDEX[ChannelId.RAIN_MM]] = aligned.rain[:, None, None]
    if aligned.sites:
        xy = np.array([(s.px, s.py) for s in aligned.sites], dtype=np.float64)
        raw[:, _FEATURE_INDEX[ChannelId.SMC_LAG]] = interpolate_sites(
            aligned.last_ok_smc(), idw_weights(aligned.geo, xy, idw_power), aligned.geo)
    return raw


def channel_index(c: ChannelId) -> int:
    return _FEATURE_INDEX[ChannelId(c)]
