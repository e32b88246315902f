"""CSV loaders for sensors, weather and sites, and daily alignment with scenes."""
from __future__ import annotations

import csv
import datetime as dt
import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CsvRowError, EmptyOverlapError, ValidationError
from .raster import ChannelId, GridGeo, SceneSeries, cube_read

logger = logging.getLogger(__name__)

EPOCH = dt.date(1970, 1, 1)

SENSOR_HEADER = ("site_id", "date", "depth_cm", "smc_m3m3", "qc")
WEATHER_HEADER = ("date", "rain_mm", "et0_mm", "tmin_c", "tmax_c")
SITES_HEADER = ("site_id", "region_id", "px", "py", "crop_label")


def to_day(d: dt.date) -> int:
    return (d - EPOCH).days


def from_day(day: int) -> dt.date:
    return EPOCH + dt.timedelta(days=int(day))


def fmt_float(x: float) -> str:
    """Shortest text that round-trips the float32 value exactly."""
    return np.format_float_positional(np.float32(x), trim="-")


class QC(str, enum.Enum):
    OK = "OK"
    SUSPECT = "SUSPECT"
    MISSING = "MISSING"


class Flag(enum.IntEnum):
    OK = 0
    INTERPOLATED = 1
    MISSING = 2


@dataclass(frozen=True)
class SiteMeta:
    site_id: str
    region_id: str
    px: int
    py: int
    crop_label: str


@dataclass(frozen=True)
class SensorRecord:
    site_id: str
    date: dt.date
    smc: float
    qc: QC = QC.OK
    depth_cm: float = 30.0


@dataclass(frozen=True)
class WeatherRecord:
    date: dt.date
    rain_mm: float
    et0_mm: float
    tmin_c: float
    tmax_c: float

    def __post_init__(self):
        if self.rain_mm < 0 or self.et0_mm < 0:
            raise ValidationError(f"{self.date}: rain and et0 must be non-negative")
        if self.tmin_c > self.tmax_c:
            raise ValidationError(f"{self.date}: tmin_c exceeds tmax_c")


def _rows(path, header: Sequence[str]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise CsvRowError(path, 1, "missing header") from None
        missing = [c for c in header if c not in got]
        if missing:
            raise CsvRowError(path, 1, f"missing column(s) {', '.join(missing)}")
        idx = [got.index(c) for c in header]
        for row in reader:
            if not row:
                continue
            line = reader.line_num
            if len(row) != len(got):
                raise CsvRowError(path, line, f"expected {len(got)} fields, found {len(row)}")
            yield line, [row[i].strip() for i in idx]


def _parse_date(path, line, text) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise CsvRowError(path, line, f"unparseable date {text!r}") from None


def _parse_float(path, line, text, name) -> float:
    try:
        return float(text)
    except ValueError:
        raise CsvRowError(path, line, f"unparseable {name} {text!r}") from None


def load_sensor_csv(path) -> list[SensorRecord]:
    out = []
    for line, (site, date, depth, smc, qc) in _rows(path, SENSOR_HEADER):
        day = _parse_date(path, line, date)
        try:
            qc = QC(qc)
        except ValueError:
            raise CsvRowError(path, line, f"unknown qc flag {qc!r}") from None
        value = float("nan") if smc == "" else _parse_float(path, line, smc, "smc_m3m3")
        if qc is QC.OK and not (0.0 <= value <= 1.0):
            raise CsvRowError(path, line, f"smc {smc} outside [0, 1] with qc=OK")
        depth = float("nan") if depth == "" else _parse_float(path, line, depth, "depth_cm")
        out.append(SensorRecord(site, day, value, qc, depth))
    return out


def load_weather_csv(path) -> list[WeatherRecord]:
    out = []
    for line, (date, rain, et0, tmin, tmax) in _rows(path, WEATHER_HEADER):
        day = _parse_date(path, line, date)
        vals = [_parse_float(path, line, v, n) for v, n in zip((rain, et0, tmin, tmax), WEATHER_HEADER[1:])]
        try:
            out.append(WeatherRecord(day, *vals))
        except ValidationError as exc:
            raise CsvRowError(path, line, str(exc)) from None
    return out


def load_sites_csv(path, geo: GridGeo | None = None) -> list[SiteMeta]:
    out, seen = [], set()
    for line, (site, region, px, py, crop) in _rows(path, SITES_HEADER):
        try:
            px, py = int(px), int(py)
        except ValueError:
            raise CsvRowError(path, line, "pixel coordinates must be integers") from None
        if site in seen:
            raise CsvRowError(path, line, f"duplicate site_id {site!r}")
        if geo is not None and not geo.contains(px, py):
            raise CsvRowError(path, line, f"site {site} at ({px},{py}) is outside the grid")
        seen.add(site)
        out.append(SiteMeta(site, region, px, py, crop))
    return out


def write_sensor_csv(path, records: Iterable[SensorRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SENSOR_HEADER)
        for r in records:
            smc = "" if np.isnan(r.smc) else fmt_float(r.smc)
            w.writerow([r.site_id, r.date.isoformat(), fmt_float(r.depth_cm), smc, r.qc.value])


def write_weather_csv(path, records: Iterable[WeatherRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WEATHER_HEADER)
        for r in records:
            w.writerow([r.date.isoformat()] + [fmt_float(v) for v in (r.rain_mm, r.et0_mm, r.tmin_c, r.tmax_c)])


def write_sites_csv(path, sites: Iterable[SiteMeta]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SITES_HEADER)
        for s in sites:
            w.writerow([s.site_id, s.region_id, s.px, s.py, s.crop_label])


def load_scene_dir(path) -> SceneSeries:
    """Merge every ``*.smc1`` cube in a directory into one time-ordered series.

    Cubes may carry different channel subsets; missing planes become NaN.
    """
    files = sorted(Path(path).glob("*.smc1"))
    if not files:
        raise ValidationError(f"no .smc1 cubes in {path}")
    cubes = [cube_read(f) for f in files]
    channels = [c for c in ChannelId if any(c in s.channel_ids for cube in cubes for s in cube.stacks)]
    geo = cubes[0].geo
    by_day: dict[int, dict] = {}
    for cube in cubes:
        if cube.geo != geo:
            raise ValidationError(f"scene cubes in {path} have different grids")
        for s in cube.stacks:
            if s.timestamp in by_day:
                raise ValidationError(f"two scenes share timestamp {s.timestamp}")
            by_day[s.timestamp] = {c: r.values for c, r in s.channels}
    days = sorted(by_day)
    data = np.full((len(days), len(channels)) + geo.shape, np.nan, dtype=np.float32)
    for i, d in enumerate(days):
        for j, c in enumerate(channels):
            if c in by_day[d]:
                data[i, j] = by_day[d][c]
    cadence = int(np.gcd.reduce(np.diff(days))) if len(days) > 1 else 1
    return SceneSeries.from_array(data, days, channels, geo, cadence)


@dataclass
class AlignedDataset:
    """Everything on one daily axis.

    ``eo`` holds forward-filled scene planes; ``eo_age`` gives, per day and
    channel, the days elapsed since that plane was acquired (-1: never).
    """
    days: np.ndarray            # (D,) int64 days since epoch
    geo: GridGeo
    sites: list[SiteMeta]
    smc: np.ndarray             # (D, S) float32, NaN where MISSING
    smc_flag: np.ndarray        # (D, S) int8 Flag codes
    rain: np.ndarray            # (D,) float32
    et0: np.ndarray
    tmin: np.ndarray
    tmax: np.ndarray
    eo_channels: list[ChannelId]
    eo: np.ndarray              # (D, C, H, W) float32
    eo_age: np.ndarray          # (D, C) int32

    @property
    def site_ids(self) -> list[str]:
        return [s.site_id for s in self.sites]

    def rows(self):
        """Joined (date, site_id, smc, flag, rain_mm, et0_mm) rows ordered by (date, site_id)."""
        order = sorted(range(len(self.sites)), key=lambda j: self.sites[j].site_id)
        for i, day in enumerate(self.days):
            for j in order:
                yield (from_day(day), self.sites[j].site_id, float(self.smc[i, j]),
                       Flag(int(self.smc_flag[i, j])), float(self.rain[i]), float(self.et0[i]))

    def eo_plane(self, channel: ChannelId) -> np.ndarray | None:
        if channel in self.eo_channels:
            return self.eo[:, self.eo_channels.index(channel)]
        return None

    def last_ok_smc(self) -> np.ndarray:
        """SMC with every gap carrying the last known value (NaN before the first)."""
        out = self.smc.copy()
        for i in range(1, len(out)):
            gap = np.isnan(out[i])
            out[i, gap] = out[i - 1, gap]
        return out


def _fill_site(days: np.ndarray, values: dict[int, float], max_gap: int):
    D = len(days)
    smc = np.full(D, np.nan, dtype=np.float32)
    flag = np.full(D, Flag.MISSING, dtype=np.int8)
    ok = [(i, values[d]) for i, d in enumerate(days.tolist()) if d in values]
    for i, v in ok:
        smc[i] = v
        flag[i] = Flag.OK
    for (i0, v0), (i1, v1) in zip(ok, ok[1:]):
        gap = i1 - i0 - 1
        if 0 < gap <= max_gap:
            w = np.arange(1, gap + 1, dtype=np.float64) / (gap + 1)
            smc[i0 + 1:i1] = (v0 + (v1 - v0) * w).astype(np.float32)
            flag[i0 + 1:i1] = Flag.INTERPOLATED
    return smc, flag


def align_daily(sensors: Sequence[SensorRecord], weather: Sequence[WeatherRecord], series: SceneSeries,
                sites: Sequence[SiteMeta] | None = None, max_gap: int = 3) -> AlignedDataset:
    """Join sensors, weather and scenes on the days all three cover.

    Sensor gaps of at most ``max_gap`` days between two OK readings are
    linearly interpolated; scene planes are carried forward from their most
    recent acquisition.
    """
    series.validate()
    if not sensors:
        raise EmptyOverlapError("no sensor records")
    if not weather:
        raise EmptyOverlapError("no weather records")
    s_days = [to_day(r.date) for r in sensors]
    w_days = [to_day(r.date) for r in weather]
    e_days = series.timestamps
    start = max(min(s_days), min(w_days), int(e_days[0]))
    end = min(max(s_days), max(w_days), int(e_days[-1]))
    if end < start:
        raise EmptyOverlapError(
            f"sensors, weather and scenes share no day (sensor {min(s_days)}..{max(s_days)}, "
            f"weather {min(w_days)}..{max(w_days)}, scenes {e_days[0]}..{e_days[-1]})")
    days = np.arange(start, end + 1, dtype=np.int64)
    D = len(days)

    if sites is None:
        sites = [SiteMeta(sid, "", 0, 0, "") for sid in sorted({r.site_id for r in sensors})]
    sites = list(sites)
    index = {s.site_id: j for j, s in enumerate(sites)}
    per_site: list[dict[int, float]] = [dict() for _ in sites]
    for r, d in zip(sensors, s_days):
        j = index.get(r.site_id)
        if j is None:
            continue
        if r.qc is QC.OK:
            if d in per_site[j]:
                raise ValidationError(f"duplicate OK sensor reading for {r.site_id} on {r.date}")
            per_site[j][d] = float(r.smc)
    smc = np.full((D, len(sites)), np.nan, dtype=np.float32)
    flag = np.full((D, len(sites)), Flag.MISSING, dtype=np.int8)
    for j in range(len(sites)):
        smc[:, j], flag[:, j] = _fill_site(days, per_site[j], max_gap)

    met = np.full((D, 4), np.nan, dtype=np.float32)
    for r, d in zip(weather, w_days):
        if start <= d <= end:
            met[d - start] = (r.rain_mm, r.et0_mm, r.tmin_c, r.tmax_c)
    gaps = np.isnan(met[:, 0]).sum()
    if gaps:
        logger.warning("%d day(s) without weather records; rain and et0 set to 0", gaps)
        met[np.isnan(met[:, 0]), :2] = 0.0

    channels = [c for c in ChannelId if any(c in s.channel_ids for s in series.stacks)]
    H, W = series.geo.shape
    eo = np.full((D, len(channels), H, W), np.nan, dtype=np.float32)
    age = np.full((D, len(channels)), -1, dtype=np.int32)
    last: list[tuple[int, np.ndarray] | None] = [None] * len(channels)
    stacks = iter(series.stacks)
    pending = next(stacks, None)
    for i, day in enumerate(days.tolist()):
        while pending is not None and pending.timestamp <= day:
            for j, c in enumerate(channels):
                r = pending.get(c)
                if r is not None and not np.isnan(r.values).all():
                    last[j] = (pending.timestamp, r.values)
            pending = next(stacks, None)
        for j, held in enumerate(last):
            if held is not None:
                eo[i, j] = held[1]
                age[i, j] = day - held[0]

    return AlignedDataset(days, series.geo, sites, smc, flag, met[:, 0], met[:, 1], met[:, 2], met[:, 3],
                          channels, eo, age)
