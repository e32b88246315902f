"""Seeded synthetic vineyard: weather, bucket water balance, phenology and sensor forward models.

The world stands in for field data. Every random draw comes from a
``SeedSequence`` keyed on (seed, stream, day), so any part of the world can be
regenerated independently of how the rest was computed.
"""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ValidationError
from .ingest import (
    QC,
    SensorRecord,
    SiteMeta,
    WeatherRecord,
    to_day,
    write_sensor_csv,
    write_sites_csv,
    write_weather_csv,
)
from .raster import ChannelId, GridGeo, Raster2D, SceneSeries, cube_write, gcd_cadence

# Radar forward-model constants (dB).
VV_OFFSET = -25.0
VV_PER_SMC = 40.0
VV_PER_NDVI = -4.0
VV_PER_DEG = -0.15
VH_BIAS = -7.0
REF_INC_DEG = 35.0
DRAIN_THRESHOLD = 0.30

RAIN_PROB = 0.25
RAIN_MEAN_MM = 6.0

# stream ids for SeedSequence keys
_S_WEATHER, _S_FIELD, _S_SITES, _S_S1, _S_S2, _S_SENSOR, _S_INC = range(7)


@dataclass(frozen=True)
class SoilParams:
    theta_r: float = 0.05
    theta_s: float = 0.45
    k_infil: float = 0.004
    k_drain: float = 0.08
    kc: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.theta_r < self.theta_s <= 1.0:
            raise ValidationError("require 0 <= theta_r < theta_s <= 1")
        if min(self.k_infil, self.k_drain, self.kc) < 0:
            raise ValidationError("soil rates must be non-negative")


@dataclass(frozen=True)
class CropPhenology:
    ndvi_min: float
    ndvi_max: float
    peak_doy: float
    width_days: float
    name: str = "vine"

    def __post_init__(self):
        if not -1.0 <= self.ndvi_min <= self.ndvi_max <= 1.0:
            raise ValidationError("require -1 <= ndvi_min <= ndvi_max <= 1")
        if self.width_days <= 0:
            raise ValidationError("width_days must be positive")

    def ndvi_at(self, doy: float) -> float:
        d = abs(doy - self.peak_doy) % 365.25
        d = min(d, 365.25 - d)
        return self.ndvi_min + (self.ndvi_max - self.ndvi_min) * math.exp(-0.5 * (d / self.width_days) ** 2)


DEFAULT_CROPS = (
    CropPhenology(0.20, 0.75, 20.0, 45.0, "shiraz"),
    CropPhenology(0.15, 0.65, 35.0, 40.0, "chardonnay"),
    CropPhenology(0.25, 0.80, 5.0, 55.0, "semillon"),
)


@dataclass(frozen=True)
class SimConfig:
    grid: GridGeo = field(default_factory=lambda: GridGeo(16, 16))
    n_sites: int = 20
    n_regions: int = 3
    days: int = 730
    revisit_s1: int = 3
    revisit_s2: int = 5
    seed: int = 0
    noise_db: float = 0.5
    optical_noise: float = 0.01
    sensor_noise: float = 0.01
    start_date: str = "2015-01-01"
    theta0: float = 0.25
    infil_jitter: float = 0.25
    inc_range: tuple[float, float] = (30.0, 44.0)

    def __post_init__(self):
        if isinstance(self.grid, dict):
            object.__setattr__(self, "grid", GridGeo(**self.grid))
        object.__setattr__(self, "inc_range", tuple(self.inc_range))
        if self.revisit_s1 < 1 or self.revisit_s2 < 1:
            raise ValidationError("revisit periods must be >= 1 day")
        if self.days < 2:
            raise ValidationError("simulation needs at least 2 days")
        if self.n_sites < 0 or self.n_regions < 1:
            raise ValidationError("need n_sites >= 0 and n_regions >= 1")
        if self.n_sites > self.grid.width * self.grid.height:
            raise ValidationError("more sites than grid pixels")
        if min(self.noise_db, self.optical_noise, self.sensor_noise) < 0:
            raise ValidationError("noise levels must be non-negative")

    @property
    def start(self) -> dt.date:
        return dt.date.fromisoformat(self.start_date)

    def to_json(self) -> dict:
        d = asdict(self)
        d["inc_range"] = list(self.inc_range)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "SimConfig":
        doc = dict(doc)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown sim config key(s): {', '.join(sorted(unknown))}")
        return cls(**doc)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *key]))


def gen_weather(cfg: SimConfig) -> list[WeatherRecord]:
    """Daily weather: Bernoulli x exponential rain, sinusoidal reference ET."""
    rng = _rng(cfg.seed, _S_WEATHER)
    wet = rng.random(cfg.days) < RAIN_PROB
    amount = rng.exponential(RAIN_MEAN_MM, cfg.days)
    rain = np.where(wet, amount, 0.0)
    jitter = rng.normal(0.0, 0.3, cfg.days)
    tnoise = rng.normal(0.0, 2.0, cfg.days)
    out = []
    for i in range(cfg.days):
        day = cfg.start + dt.timedelta(days=i)
        season = math.cos(2.0 * math.pi * (day.timetuple().tm_yday - 15) / 365.25)  # +1 mid-January
        et0 = max(0.0, 3.5 + 2.0 * season + jitter[i])
        tmax = 24.0 + 8.0 * season + tnoise[i]
        tmin = tmax - 10.0 - abs(tnoise[i])
        out.append(WeatherRecord(day, float(np.float32(rain[i])), float(np.float32(et0)),
                                 float(np.float32(tmin)), float(np.float32(tmax))))
    return out


@dataclass
class WaterFluxes:
    theta: np.ndarray
    infiltration: np.ndarray
    et: np.ndarray
    drainage: np.ndarray
    clamped: np.ndarray


def water_balance_fluxes(theta, rain_mm, et0_mm, p: SoilParams, k_infil=None) -> WaterFluxes:
    """One daily step with every flux exposed. ``k_infil`` may be a per-pixel array."""
    theta = np.asarray(theta, dtype=np.float64)
    k = p.k_infil if k_infil is None else np.asarray(k_infil, dtype=np.float64)
    infil = k * rain_mm
    et = p.kc * et0_mm * 0.01 * (theta - p.theta_r) / (p.theta_s - p.theta_r)
    drain = p.k_drain * np.maximum(0.0, theta - DRAIN_THRESHOLD)
    raw = theta + infil - et - drain
    new = np.clip(raw, p.theta_r, p.theta_s)
    return WaterFluxes(new, np.broadcast_to(infil, theta.shape), et, drain, new != raw)


def step_water_balance(theta, rain_mm: float, et0_mm: float, p: SoilParams, k_infil=None):
    """Advance soil moisture by one day; returns the clamped new value."""
    t = np.asarray(theta, dtype=np.float64)
    tol = 1e-7
    if np.any((t < p.theta_r - tol) | (t > p.theta_s + tol)) or np.isnan(t).any():
        raise ArgumentError(f"theta outside [{p.theta_r}, {p.theta_s}]")
    if rain_mm < 0 or et0_mm < 0:
        raise ArgumentError("rain and et0 must be non-negative")
    new = water_balance_fluxes(t, rain_mm, et0_mm, p, k_infil).theta
    return float(new) if np.ndim(theta) == 0 else new


def radar_forward(theta_map: Raster2D, ndvi_map: Raster2D, inc_deg: float, seed, noise_db: float = 0.5):
    """Synthetic VV/VH backscatter in dB for one acquisition."""
    if theta_map.geo != ndvi_map.geo:
        raise ArgumentError("theta and ndvi maps are on different grids")
    th = theta_map.values.astype(np.float64)
    nd = ndvi_map.values.astype(np.float64)
    if np.any((th < 0) | (th > 1)) or np.any((nd < -1) | (nd > 1)):
        raise ArgumentError("theta must lie in [0, 1] and ndvi in [-1, 1]")
    rng = np.random.default_rng(seed)
    n_vv = rng.normal(0.0, 1.0, th.shape) * noise_db
    n_vh = rng.normal(0.0, 1.0, th.shape) * noise_db
    vv = VV_OFFSET + VV_PER_SMC * th + VV_PER_NDVI * np.maximum(0.0, nd) + VV_PER_DEG * (inc_deg - REF_INC_DEG) + n_vv
    vh = vv + VH_BIAS + n_vh
    return theta_map.with_values(vv.astype(np.float32)), theta_map.with_values(vh.astype(np.float32))


def optical_forward(ndvi_map: np.ndarray, rng: np.random.Generator, noise: float) -> dict[ChannelId, np.ndarray]:
    """Reflectances whose noiseless NDVI equals ``ndvi_map``."""
    n = np.clip(ndvi_map.astype(np.float64), -0.99, 0.99)
    nir = 0.22 + 0.25 * np.maximum(n, 0.0)
    red = nir * (1.0 - n) / (1.0 + n)
    green = 0.45 * red + 0.12 * nir
    blue = 0.7 * red
    out = {}
    for c, v in ((ChannelId.RED, red), (ChannelId.GREEN, green), (ChannelId.BLUE, blue), (ChannelId.NIR, nir)):
        out[c] = np.maximum(v + rng.normal(0.0, 1.0, v.shape) * noise, 0.0).astype(np.float32)
    return out


def smooth_field(rng: np.random.Generator, shape: tuple[int, int], passes: int = 3) -> np.ndarray:
    """Zero-mean unit-range smooth noise (repeated 3x3 box blur with edge padding)."""
    f = rng.normal(0.0, 1.0, shape)
    for _ in range(passes):
        p = np.pad(f, 1, mode="edge")
        f = sum(p[i:i + shape[0], j:j + shape[1]] for i in range(3) for j in range(3)) / 9.0
    f = f - f.mean()
    span = np.abs(f).max()
    return f / span if span > 0 else f


def region_map(grid: GridGeo, n_regions: int) -> np.ndarray:
    """Vertical bands of equal width, region index per pixel."""
    cols = (np.arange(grid.width) * n_regions) // grid.width
    return np.broadcast_to(cols, grid.shape).copy()


@dataclass
class World:
    config: SimConfig
    soil: SoilParams
    crops: tuple[CropPhenology, ...]
    sites: list[SiteMeta]
    weather: list[WeatherRecord]
    sensors: list[SensorRecord]
    scenes: SceneSeries
    truth: SceneSeries
    days: np.ndarray                 # (D,) days since epoch
    theta: np.ndarray                # (D, H, W) float32 truth
    ndvi_truth: np.ndarray           # (D, H, W) float32
    k_infil: np.ndarray              # (H, W)
    s1_days: list[int] = field(default_factory=list)
    s1_inc: list[float] = field(default_factory=list)
    s2_days: list[int] = field(default_factory=list)
    fluxes: dict[str, np.ndarray] = field(default_factory=dict)

    def day_index(self, day: int) -> int:
        return int(day - self.days[0])

    def site_truth(self) -> np.ndarray:
        """(D, S) truth at each site pixel."""
        return np.stack([self.theta[:, s.py, s.px] for s in self.sites], axis=1)

    def write(self, outdir) -> dict[str, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "scenes": outdir / "scenes.smc1",
            "truth": outdir / "truth.smc1",
            "sensors": outdir / "sensors.csv",
            "weather": outdir / "weather.csv",
            "sites": outdir / "sites.csv",
            "world": outdir / "world.json",
        }
        cube_write(self.scenes, paths["scenes"])
        cube_write(self.truth, paths["truth"])
        write_sensor_csv(paths["sensors"], self.sensors)
        write_weather_csv(paths["weather"], self.weather)
        write_sites_csv(paths["sites"], self.sites)
        doc = {
            "config": self.config.to_json(),
            "soil": asdict(self.soil),
            "crops": [asdict(c) for c in self.crops],
            "seed": self.config.seed,
            "s1_acquisitions": [{"day": d, "inc_deg": i} for d, i in zip(self.s1_days, self.s1_inc)],
            "s2_acquisitions": self.s2_days,
        }
        paths["world"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return paths


def _place_sites(cfg: SimConfig, regions: np.ndarray, crops) -> list[SiteMeta]:
    rng = _rng(cfg.seed, _S_SITES)
    H, W = cfg.grid.shape
    cells = rng.choice(H * W, size=cfg.n_sites, replace=False)
    sites = []
    for n, cell in enumerate(cells):
        py, px = divmod(int(cell), W)
        r = int(regions[py, px])
        sites.append(SiteMeta(f"S{n + 1:02d}", f"R{r + 1}", px, py, crops[r % len(crops)].name))
    return sites


def generate_world(cfg: SimConfig, soil: SoilParams | None = None, crops=None,
                   sites: list[SiteMeta] | None = None) -> World:
    soil = soil or SoilParams()
    crops = tuple(crops or DEFAULT_CROPS)
    if not crops:
        raise ValidationError("need at least one crop phenology")
    geo = cfg.grid
    H, W = geo.shape
    regions = region_map(geo, cfg.n_regions)
    if sites is None:
        sites = _place_sites(cfg, regions, crops)
    for s in sites:
        if not geo.contains(s.px, s.py):
            raise ValidationError(f"site {s.site_id} at ({s.px},{s.py}) is outside the grid")

    weather = gen_weather(cfg)
    frng = _rng(cfg.seed, _S_FIELD)
    k_infil = soil.k_infil * (1.0 + cfg.infil_jitter * smooth_field(frng, geo.shape))
    ndvi_offset = 0.05 * smooth_field(frng, geo.shape)

    start = to_day(cfg.start)
    days = np.arange(start, start + cfg.days, dtype=np.int64)
    D = cfg.days
    theta = np.empty((D, H, W), dtype=np.float64)
    flux = {k: np.zeros((D, H, W)) for k in ("infiltration", "et", "drainage")}
    clamped = np.zeros((D, H, W), dtype=bool)
    theta[0] = np.clip(cfg.theta0, soil.theta_r, soil.theta_s)
    for i in range(1, D):
        w = weather[i]
        f = water_balance_fluxes(theta[i - 1], w.rain_mm, w.et0_mm, soil, k_infil)
        theta[i] = f.theta
        flux["infiltration"][i] = f.infiltration
        flux["et"][i] = f.et
        flux["drainage"][i] = f.drainage
        clamped[i] = f.clamped
    theta32 = theta.astype(np.float32)

    ndvi_truth = np.empty((D, H, W), dtype=np.float32)
    for i, day in enumerate(days):
        doy = (dt.date(1970, 1, 1) + dt.timedelta(days=int(day))).timetuple().tm_yday
        base = np.array([c.ndvi_at(doy) for c in crops], dtype=np.float64)
        ndvi_truth[i] = np.clip(base[regions % len(crops)] + ndvi_offset, -1.0, 1.0)

    s1_idx = list(range(0, D, cfg.revisit_s1))
    s2_idx = list(range(0, D, cfg.revisit_s2))
    scene_idx = sorted(set(s1_idx) | set(s2_idx))
    s1_set, s2_set = set(s1_idx), set(s2_idx)
    channels = [ChannelId.VV_DB, ChannelId.VH_DB, ChannelId.INC_DEG,
                ChannelId.RED, ChannelId.GREEN, ChannelId.BLUE, ChannelId.NIR]
    cube = np.full((len(scene_idx), len(channels), H, W), np.nan, dtype=np.float32)
    s1_inc = []
    for n, i in enumerate(scene_idx):
        if i in s1_set:
            inc = float(_rng(cfg.seed, _S_INC, i).uniform(*cfg.inc_range))
            s1_inc.append(inc)
            seed = np.random.SeedSequence([cfg.seed, _S_S1, i])
            vv, vh = radar_forward(Raster2D(geo, theta32[i]), Raster2D(geo, ndvi_truth[i]), inc, seed, cfg.noise_db)
            cube[n, 0], cube[n, 1] = vv.values, vh.values
            cube[n, 2] = np.float32(inc)
        if i in s2_set:
            refl = optical_forward(ndvi_truth[i], _rng(cfg.seed, _S_S2, i), cfg.optical_noise)
            for j, c in enumerate(channels[3:], start=3):
                cube[n, j] = refl[c]
    scenes = SceneSeries.from_array(cube, days[scene_idx].tolist(), channels, geo,
                                    gcd_cadence(cfg.revisit_s1, cfg.revisit_s2))
    truth = SceneSeries.from_array(theta32[:, None], days.tolist(), [ChannelId.SMC_MAP], geo, 1)

    srng = _rng(cfg.seed, _S_SENSOR)
    noise = srng.normal(0.0, 1.0, (D, len(sites))) * cfg.sensor_noise
    sensors = []
    for i in range(D):
        day = cfg.start + dt.timedelta(days=i)
        for j, s in enumerate(sites):
            v = float(np.clip(np.float32(theta32[i, s.py, s.px] + noise[i, j]), 0.0, 1.0))
            if cfg.sensor_noise == 0:
                v = float(theta32[i, s.py, s.px])
            sensors.append(SensorRecord(s.site_id, day, v, QC.OK))

    fluxes = dict(flux, clamped=clamped, theta64=theta)
    return World(cfg, soil, crops, list(sites), weather, sensors, scenes, truth, days, theta32, ndvi_truth,
                 k_infil, [int(days[i]) for i in s1_idx], s1_inc, [int(days[i]) for i in s2_idx], fluxes)
