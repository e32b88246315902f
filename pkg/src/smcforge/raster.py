"""Grid data model and the SMC1 binary cube container.

All planes are float32, row-major, with NaN as the only nodata value.
SMC1 layout (all little-endian)::

    "SMC1" | version u16 | channel_count u16 | T u32 | H u32 | W u32
    | cadence_days u32 | origin_x f64 | origin_y f64 | pixel_size f64
    | timestamps i64 x T | (len u8 + ASCII name) x C
    | payload f32, T-major, then channel, then row-major plane
"""
from __future__ import annotations

import enum
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ArgumentError,
    BadMagicError,
    CubeFormatError,
    TruncatedCubeError,
    ValidationError,
    VersionMismatchError,
)

MAGIC = b"SMC1"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIIIddd")


class ChannelId(str, enum.Enum):
    VV_DB = "VV_DB"
    VH_DB = "VH_DB"
    HH_DB = "HH_DB"
    HV_DB = "HV_DB"
    INC_DEG = "INC_DEG"
    RED = "RED"
    GREEN = "GREEN"
    BLUE = "BLUE"
    NIR = "NIR"
    NDVI = "NDVI"
    DOY_SIN = "DOY_SIN"
    DOY_COS = "DOY_COS"
    RAIN_MM = "RAIN_MM"
    SMC_LAG = "SMC_LAG"
    SMC_MAP = "SMC_MAP"

    def __str__(self) -> str:
        return self.value


# The fixed model input order: every ChannelId except the SMC_MAP target.
FEATURE_CHANNELS: tuple[ChannelId, ...] = tuple(c for c in ChannelId if c is not ChannelId.SMC_MAP)
POLARIZATION_CHANNELS = (ChannelId.VV_DB, ChannelId.VH_DB, ChannelId.HH_DB, ChannelId.HV_DB)
GROUND_CHANNELS = (ChannelId.RAIN_MM, ChannelId.SMC_LAG)


@dataclass(frozen=True)
class GridGeo:
    width: int
    height: int
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 10.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.pixel_size > 0:
            raise ValidationError(f"pixel_size must be positive, got {self.pixel_size}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def contains(self, px: int, py: int) -> bool:
        return 0 <= px < self.width and 0 <= py < self.height


@dataclass(frozen=True, eq=False)
class Raster2D:
    geo: GridGeo
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.shape != self.geo.shape:
            raise ValidationError(f"plane shape {v.shape} does not match grid {self.geo.shape}")
        if np.isinf(v).any():
            raise ValidationError("raster values must be finite or NaN")
        v = np.ascontiguousarray(v).view()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def full(cls, geo: GridGeo, value: float) -> "Raster2D":
        return cls(geo, np.full(geo.shape, value, dtype=np.float32))

    def with_values(self, values) -> "Raster2D":
        return Raster2D(self.geo, values)


@dataclass(frozen=True, eq=False)
class RasterStack:
    timestamp: int
    channels: tuple[tuple[ChannelId, Raster2D], ...]
    notes: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        chans = tuple((ChannelId(c), r) for c, r in self.channels)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "timestamp", int(self.timestamp))
        ids = [c for c, _ in chans]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate channel in stack at t={self.timestamp}")
        if chans:
            geo = chans[0][1].geo
            if any(r.geo != geo for _, r in chans):
                raise ValidationError(f"channel grids differ within stack at t={self.timestamp}")

    @property
    def channel_ids(self) -> tuple[ChannelId, ...]:
        return tuple(c for c, _ in self.channels)

    @property
    def geo(self) -> GridGeo:
        return self.channels[0][1].geo

    def get(self, channel: ChannelId) -> Raster2D | None:
        for c, r in self.channels:
            if c is channel:
                return r
        return None

    def __getitem__(self, channel: ChannelId) -> Raster2D:
        r = self.get(ChannelId(channel))
        if r is None:
            raise KeyError(channel)
        return r

    def array(self) -> np.ndarray:
        """Channels stacked as a (C, H, W) float32 array."""
        return np.stack([r.values for _, r in self.channels])


@dataclass(frozen=True, eq=False)
class SceneSeries:
    stacks: tuple[RasterStack, ...]
    cadence: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stacks", tuple(self.stacks))

    def validate(self) -> None:
        if not self.stacks:
            raise ValidationError("scene series is empty")
        if self.cadence < 1:
            raise ValidationError("cadence must be >= 1 day")
        geo = self.stacks[0].geo
        prev = None
        for s in self.stacks:
            if not s.channels:
                raise ValidationError(f"stack at t={s.timestamp} has no channels")
            if s.geo != geo:
                raise ValidationError(f"stack at t={s.timestamp} has a different grid")
            if prev is not None and s.timestamp <= prev:
                raise ValidationError("timestamps must be strictly increasing")
            prev = s.timestamp

    @property
    def geo(self) -> GridGeo:
        return self.stacks[0].geo

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([s.timestamp for s in self.stacks], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.stacks)

    def array(self) -> np.ndarray:
        """(T, C, H, W) float32 array; requires identical channel lists."""
        return np.stack([s.array() for s in self.stacks])

    @classmethod
    def from_array(cls, data: np.ndarray, timestamps: Sequence[int], channels: Sequence[ChannelId],
                   geo: GridGeo, cadence: int = 1) -> "SceneSeries":
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 4 or data.shape[:2] != (len(timestamps), len(channels)):
            raise ValidationError(f"array of shape {data.shape} does not match timestamps/channels")
        stacks = tuple(
            RasterStack(int(t), tuple((ChannelId(c), Raster2D(geo, data[i, j])) for j, c in enumerate(channels)))
            for i, t in enumerate(timestamps)
        )
        return cls(stacks, cadence)


def cube_nbytes(T: int, channels: Sequence[str], H: int, W: int) -> int:
    """Exact SMC1 file length for a cube of the given dimensions."""
    names = sum(1 + len(str(c)) for c in channels)
    return _HEADER.size + 8 * T + names + 4 * T * len(channels) * H * W


def _encode(series: SceneSeries) -> bytes:
    series.validate()
    channels = series.stacks[0].channel_ids
    for s in series.stacks:
        if s.channel_ids != channels:
            raise ValidationError(f"stack at t={s.timestamp} has channels {s.channel_ids}, expected {channels}")
    geo = series.geo
    T, C = len(series.stacks), len(channels)
    if C > 0xFFFF:
        raise ValidationError("too many channels for SMC1")
    parts = [
        _HEADER.pack(MAGIC, VERSION, C, T, geo.height, geo.width, series.cadence,
                     geo.origin_x, geo.origin_y, geo.pixel_size),
        series.timestamps.astype("<i8").tobytes(),
    ]
    for c in channels:
        name = str(c).encode("ascii")
        parts.append(struct.pack("<B", len(name)) + name)
    parts.append(series.array().astype("<f4", copy=False).tobytes())
    return b"".join(parts)


def cube_write(series: SceneSeries, path) -> None:
    """Write ``series`` as an SMC1 cube. Nothing is created if validation fails."""
    payload = _encode(series)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".smc1-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cube_read(path) -> SceneSeries:
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedCubeError(_HEADER.size, len(buf))
    _, version, C, T, H, W, cadence, ox, oy, px = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: SMC1 version {version} not supported (expected {VERSION})")
    off = _HEADER.size
    if len(buf) < off + 8 * T:
        raise TruncatedCubeError(off + 8 * T, len(buf))
    timestamps = np.frombuffer(buf, dtype="<i8", count=T, offset=off)
    off += 8 * T
    channels = []
    for _ in range(C):
        if off >= len(buf):
            raise TruncatedCubeError(off + 1, len(buf))
        n = buf[off]
        name = buf[off + 1: off + 1 + n]
        if len(name) < n:
            raise TruncatedCubeError(off + 1 + n, len(buf))
        try:
            channels.append(ChannelId(name.decode("ascii")))
        except (UnicodeDecodeError, ValueError):
            raise CubeFormatError(f"{path}: unknown channel name {name!r}") from None
        off += 1 + n
    expected = off + 4 * T * C * H * W
    if len(buf) < expected:
        raise TruncatedCubeError(expected, len(buf))
    if len(buf) > expected:
        raise CubeFormatError(f"{path}: {len(buf) - expected} trailing bytes after payload")
    geo = GridGeo(W, H, ox, oy, px)
    data = np.frombuffer(buf, dtype="<f4", offset=off).reshape(T, C, H, W).astype(np.float32)
    series = SceneSeries.from_array(data, timestamps.tolist(), channels, geo, cadence)
    series.validate()
    return series


def extract_patch(r: Raster2D, cx: int, cy: int, k: int) -> Raster2D:
    """k x k window centred on column ``cx``, row ``cy``; cells off the grid are NaN."""
    if k < 1 or k % 2 == 0:
        raise ArgumentError(f"patch size must be odd and >= 1, got {k}")
    half = k // 2
    out = np.full((k, k), np.nan, dtype=np.float32)
    H, W = r.geo.shape
    y0, y1 = max(cy - half, 0), min(cy + half + 1, H)
    x0, x1 = max(cx - half, 0), min(cx + half + 1, W)
    if y0 < y1 and x0 < x1:
        out[y0 - (cy - half): y1 - (cy - half), x0 - (cx - half): x1 - (cx - half)] = r.values[y0:y1, x0:x1]
    geo = GridGeo(k, k, r.geo.origin_x + (cx - half) * r.geo.pixel_size,
                  r.geo.origin_y + (cy - half) * r.geo.pixel_size, r.geo.pixel_size)
    return Raster2D(geo, out)


def patch_mean(planes: np.ndarray, cx: int, cy: int, k: int) -> np.ndarray:
    """NaN-aware mean of the k x k window over the trailing two axes of ``planes``."""
    half = k // 2
    H, W = planes.shape[-2:]
    win = planes[..., max(cy - half, 0):min(cy + half + 1, H), max(cx - half, 0):min(cx + half + 1, W)]
    flat = win.reshape(win.shape[:-2] + (-1,))
    valid = ~np.isnan(flat)
    n = valid.sum(-1)
    total = np.where(valid, flat, 0).sum(-1, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, total / np.maximum(n, 1), np.nan).astype(np.float32)


def series_equal(a: SceneSeries, b: SceneSeries) -> bool:
    """Bitwise equality of two series, NaN payloads included."""
    if a.cadence != b.cadence or len(a) != len(b):
        return False
    for sa, sb in zip(a.stacks, b.stacks):
        if sa.timestamp != sb.timestamp or sa.channel_ids != sb.channel_ids or sa.geo != sb.geo:
            return False
        if sa.array().tobytes() != sb.array().tobytes():
            return False
    return True


def gcd_cadence(*periods: int) -> int:
    return math.gcd(*[int(p) for p in periods]) or 1
