import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smcforge.errors import CsvRowError, EmptyOverlapError, ValidationError
from smcforge.ingest import (QC, Flag, SensorRecord, SiteMeta, WeatherRecord, align_daily, fmt_float, from_day,
                             load_scene_dir, load_sensor_csv, load_sites_csv, load_weather_csv, to_day,
                             write_sensor_csv, write_sites_csv, write_weather_csv)
from smcforge.raster import ChannelId, GridGeo, Raster2D, RasterStack, SceneSeries, cube_write

D0 = dt.date(2015, 3, 1)
HEADER = "site_id,date,depth_cm,smc_m3m3,qc\n"


def day(i):
    return D0 + dt.timedelta(days=i)


def weather(n, start=0):
    return [WeatherRecord(day(start + i), 1.0, 2.0, 10.0, 20.0) for i in range(n)]


def scenes(days, H=2, W=2, value=None):
    g = GridGeo(W, H)
    stacks = []
    for d in days:
        v = float(d) if value is None else value
        stacks.append(RasterStack(to_day(day(d)), ((ChannelId.VV_DB, Raster2D.full(g, v)),)))
    return SceneSeries(tuple(stacks))


def test_parse_sensor_row(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "S01,2015-03-02,30,0.213,OK\n")
    (r,) = load_sensor_csv(p)
    assert r.site_id == "S01" and r.date == dt.date(2015, 3, 2)
    assert r.smc == pytest.approx(0.213) and r.qc is QC.OK and r.depth_cm == 30


def test_out_of_range_ok_row_names_line(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "S01,2015-03-02,30,0.2,OK\nS01,2015-03-03,30,1.5,OK\n")
    with pytest.raises(CsvRowError) as e:
        load_sensor_csv(p)
    assert e.value.line == 3 and ":3:" in str(e.value)


def test_out_of_range_suspect_row_is_kept(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER + "S01,2015-03-03,30,1.5,SUSPECT\n")
    assert load_sensor_csv(p)[0].qc is QC.SUSPECT


def test_empty_file_with_header(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text(HEADER)
    assert load_sensor_csv(p) == []


@pytest.mark.parametrize("body, needle", [
    ("site_id,date,smc_m3m3,qc\n", "depth_cm"),
    (HEADER + "S01,2015-13-02,30,0.2,OK\n", "date"),
    (HEADER + "S01,2015-03-02,30,abc,OK\n", "smc_m3m3"),
    (HEADER + "S01,2015-03-02,30,0.2,BAD\n", "qc"),
])
def test_sensor_row_errors(tmp_path, body, needle):
    p = tmp_path / "s.csv"
    p.write_text(body)
    with pytest.raises(CsvRowError, match=needle):
        load_sensor_csv(p)


def test_weather_invariants(tmp_path):
    with pytest.raises(ValidationError):
        WeatherRecord(D0, -1.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValidationError):
        WeatherRecord(D0, 0.0, 0.0, 5.0, 1.0)
    p = tmp_path / "w.csv"
    p.write_text("date,rain_mm,et0_mm,tmin_c,tmax_c\n2015-03-01,1,2,30,20\n")
    with pytest.raises(CsvRowError) as e:
        load_weather_csv(p)
    assert e.value.line == 2


def test_sites_inside_grid(tmp_path):
    p = tmp_path / "sites.csv"
    write_sites_csv(p, [SiteMeta("A", "R1", 1, 1, "shiraz"), SiteMeta("B", "R1", 5, 0, "semillon")])
    assert len(load_sites_csv(p)) == 2
    with pytest.raises(ValidationError):
        load_sites_csv(p, GridGeo(4, 4))


def test_duplicate_site_ids_rejected(tmp_path):
    p = tmp_path / "sites.csv"
    write_sites_csv(p, [SiteMeta("A", "R1", 1, 1, "x"), SiteMeta("A", "R1", 2, 2, "x")])
    with pytest.raises(ValidationError):
        load_sites_csv(p)


def test_csv_headers_exact(tmp_path):
    write_sensor_csv(tmp_path / "s.csv", [])
    write_weather_csv(tmp_path / "w.csv", [])
    write_sites_csv(tmp_path / "p.csv", [])
    assert (tmp_path / "s.csv").read_text() == HEADER
    assert (tmp_path / "w.csv").read_text() == "date,rain_mm,et0_mm,tmin_c,tmax_c\n"
    assert (tmp_path / "p.csv").read_text() == "site_id,region_id,px,py,crop_label\n"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 400), st.floats(0, 1, allow_nan=False, width=32),
                          st.sampled_from(list(QC))), max_size=12))
def test_sensor_csv_round_trip(tmp_path_factory, rows):
    recs = [SensorRecord(f"S{i % 3}", day(d), v, q) for i, (d, v, q) in enumerate(rows)]
    p = tmp_path_factory.mktemp("csv") / "s.csv"
    write_sensor_csv(p, recs)
    back = load_sensor_csv(p)
    assert [(r.site_id, r.date, np.float32(r.smc), r.qc) for r in back] == \
        [(r.site_id, r.date, np.float32(r.smc), r.qc) for r in recs]


def test_fmt_float_round_trips_f32():
    for x in (0.1, 0.213, 1e-7, 123.456, 0.0):
        assert np.float32(float(fmt_float(x))) == np.float32(x)


def test_day_conversion():
    assert to_day(dt.date(1970, 1, 2)) == 1
    assert from_day(to_day(D0)) == D0


def test_linear_midpoint_interpolation():
    sensors = [SensorRecord("S", day(0), 0.2), SensorRecord("S", day(2), 0.4)]
    a = align_daily(sensors, weather(3), scenes([0, 1, 2]))
    assert a.smc[1, 0] == pytest.approx(0.3)
    assert list(a.smc_flag[:, 0]) == [Flag.OK, Flag.INTERPOLATED, Flag.OK]


def test_long_gap_stays_missing():
    sensors = [SensorRecord("S", day(0), 0.2), SensorRecord("S", day(11), 0.4)]
    a = align_daily(sensors, weather(12), scenes([0, 11]), max_gap=3)
    assert all(a.smc_flag[1:11, 0] == Flag.MISSING)
    assert np.isnan(a.smc[1:11, 0]).all()


def test_no_extrapolation():
    sensors = [SensorRecord("S", day(2), 0.2), SensorRecord("S", day(3), 0.25), SensorRecord("T", day(0), 0.1),
               SensorRecord("T", day(5), 0.1)]
    a = align_daily(sensors, weather(6), scenes([0, 5]))
    s = a.site_ids.index("S")
    assert a.smc_flag[0, s] == Flag.MISSING and a.smc_flag[5, s] == Flag.MISSING


def test_eo_forward_fill_ages():
    sensors = [SensorRecord("S", day(i), 0.2) for i in range(5)]
    a = align_daily(sensors, weather(5), scenes([0, 4]))
    vv = a.eo_plane(ChannelId.VV_DB)
    assert list(a.eo_age[:, 0]) == [0, 1, 2, 3, 0]
    assert (vv[1:4] == vv[0]).all()


def test_eo_single_stack_carried():
    sensors = [SensorRecord("S", day(i), 0.2) for i in range(5)]
    w = weather(5)
    # an all-NaN plane on day 4 extends the span without counting as an acquisition
    g = GridGeo(2, 2)
    s = SceneSeries((RasterStack(to_day(day(0)), ((ChannelId.VV_DB, Raster2D.full(g, -12.0)),)),
                     RasterStack(to_day(day(4)), ((ChannelId.VV_DB, Raster2D.full(g, np.nan)),))))
    a = align_daily(sensors, w, s)
    assert list(a.eo_age[:, 0]) == [0, 1, 2, 3, 4]
    assert (a.eo_plane(ChannelId.VV_DB) == -12.0).all()


def test_empty_overlap():
    sensors = [SensorRecord("S", day(50), 0.2)]
    with pytest.raises(EmptyOverlapError):
        align_daily(sensors, weather(5), scenes([0, 4]))


def test_duplicate_ok_reading_rejected():
    sensors = [SensorRecord("S", day(0), 0.2), SensorRecord("S", day(0), 0.3)]
    with pytest.raises(ValidationError):
        align_daily(sensors, weather(2), scenes([0, 1]))


def test_weather_gap_filled_with_zero(caplog):
    sensors = [SensorRecord("S", day(i), 0.2) for i in range(3)]
    w = [weather(3)[0], weather(3)[2]]
    a = align_daily(sensors, w, scenes([0, 2]))
    assert a.rain[1] == 0 and a.et0[1] == 0
    assert "without weather" in caplog.text


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=20, unique=True), st.integers(1, 5))
def test_one_row_per_day_and_no_extrapolation(obs_days, max_gap):
    sensors = [SensorRecord("S", day(d), 0.1 + 0.01 * d) for d in obs_days]
    a = align_daily(sensors, weather(31), scenes([0, 30]), max_gap=max_gap)
    lo, hi = min(obs_days), max(obs_days)
    assert np.array_equal(a.days, np.arange(to_day(day(lo)), to_day(day(hi)) + 1))
    rows = list(a.rows())
    assert len(rows) == len(a.days) and len({r[0] for r in rows}) == len(rows)
    assert a.smc_flag[0, 0] == Flag.OK and a.smc_flag[-1, 0] == Flag.OK
    interp = a.smc_flag[:, 0] == Flag.INTERPOLATED
    vals = a.smc[interp, 0]
    assert ((vals >= 0.1 + 0.01 * lo - 1e-6) & (vals <= 0.1 + 0.01 * hi + 1e-6)).all()


def test_rows_ordered_by_date_then_site():
    sensors = [SensorRecord(s, day(i), 0.2) for i in range(2) for s in ("B", "A")]
    a = align_daily(sensors, weather(2), scenes([0, 1]))
    assert [(r[0], r[1]) for r in a.rows()] == [(day(0), "A"), (day(0), "B"), (day(1), "A"), (day(1), "B")]


def test_load_scene_dir_merges_channel_subsets(tmp_path):
    g = GridGeo(2, 2)
    cube_write(SceneSeries((RasterStack(10, ((ChannelId.VV_DB, Raster2D.full(g, 1)),)),)), tmp_path / "a.smc1")
    cube_write(SceneSeries((RasterStack(12, ((ChannelId.NIR, Raster2D.full(g, 2)),)),)), tmp_path / "b.smc1")
    s = load_scene_dir(tmp_path)
    assert list(s.timestamps) == [10, 12] and s.cadence == 2
    arr = s.array()
    assert arr[0, 0, 0, 0] == 1 and np.isnan(arr[0, 1]).all() and arr[1, 1, 0, 0] == 2
