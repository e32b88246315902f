import datetime as dt
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smcforge.errors import ArgumentError, ValidationError
from smcforge.features import (ChannelStat, ChannelStats, Mode, assemble_stack, channel_index, compute_stats,
                               crop_mask, doy_encoding, doy_of, from_db, idw_weights, incidence_normalize,
                               interpolate_sites, ndvi, normalize, to_db)
from smcforge.raster import FEATURE_CHANNELS, GROUND_CHANNELS, ChannelId, GridGeo, Raster2D

G = GridGeo(3, 2)


def full(v, geo=G):
    return Raster2D.full(geo, v)


def unit_stats(**overrides):
    s = ChannelStats({c: ChannelStat(0.0, 1.0) for c in FEATURE_CHANNELS})
    for name, (m, sd) in overrides.items():
        s[ChannelId(name)] = ChannelStat(m, sd)
    return s


def test_ndvi_examples():
    assert ndvi(full(0.5), full(0.1)).values[0, 0] == pytest.approx(0.666667, abs=1e-6)
    assert ndvi(full(0.3), full(0.3)).values[0, 0] == 0.0
    assert np.isnan(ndvi(full(0.0), full(0.0)).values).all()
    assert np.isnan(ndvi(full(np.nan), full(0.2)).values).all()


def test_ndvi_geo_mismatch():
    with pytest.raises(ArgumentError):
        ndvi(full(0.5), full(0.1, GridGeo(2, 2)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (3, 3), elements=st.floats(0, 10, width=32)),
       arrays(np.float32, (3, 3), elements=st.floats(0, 10, width=32)))
def test_ndvi_bounded(nir, red):
    g = GridGeo(3, 3)
    v = ndvi(Raster2D(g, nir), Raster2D(g, red)).values
    ok = ~np.isnan(v)
    assert ((v[ok] >= -1) & (v[ok] <= 1)).all()


def test_to_db_examples():
    v = to_db(Raster2D(GridGeo(4, 1), np.array([[1.0, 0.1, 0.0, np.nan]]))).values[0]
    assert v[0] == 0.0 and v[1] == pytest.approx(-10.0) and v[2] == -60.0 and np.isnan(v[3])


def test_to_db_negative():
    with pytest.raises(ArgumentError):
        to_db(full(-0.1))


@settings(max_examples=50, deadline=None)
@given(st.floats(-59.0, 20.0))
def test_db_round_trip(db):
    r = full(db)
    assert to_db(from_db(r)).values[0, 0] == pytest.approx(np.float32(db), abs=1e-5)


def test_incidence_examples():
    assert incidence_normalize(full(-10.0), full(35.0)).values[0, 0] == np.float32(-10.0)
    expected = -10 + 10 * math.log10(math.cos(math.radians(35)) ** 2 / math.cos(math.radians(45)) ** 2)
    # cos^2 law: 10*log10(0.67101 / 0.5) = +1.2776 dB
    assert expected == pytest.approx(-8.7224, abs=5e-4)
    assert incidence_normalize(full(-10.0), full(45.0)).values[0, 0] == pytest.approx(expected, abs=1e-5)
    assert np.isnan(incidence_normalize(full(np.nan), full(40.0)).values).all()


@pytest.mark.parametrize("inc", [0.0, 90.0, -5.0, 95.0])
def test_incidence_out_of_range(inc):
    with pytest.raises(ArgumentError):
        incidence_normalize(full(-10.0), full(inc))


@settings(max_examples=50, deadline=None)
@given(st.floats(-40, 10, width=32), st.floats(1, 89))
def test_incidence_identity_at_reference(db, ref):
    out = incidence_normalize(full(db), full(ref), ref).values[0, 0]
    assert out == pytest.approx(np.float32(db), abs=1e-5)


def test_crop_mask_examples():
    assert (crop_mask(full(0.6), 0.3).values == 1).all()
    r = Raster2D(GridGeo(3, 1), np.array([[-0.9, 0.0, np.nan]]))
    m = crop_mask(r, -1.0).values
    assert m[0, :2].tolist() == [1, 1] and np.isnan(m[0, 2])
    ramp = Raster2D(GridGeo(4, 4), np.linspace(-1, 1, 16).reshape(4, 4))
    med = float(np.median(ramp.values))
    m = crop_mask(ramp, med).values
    assert m.sum() == 8 and (m[2:] == 1).all() and (m[:2] == 0).all()
    with pytest.raises(ArgumentError):
        crop_mask(full(0.5), 1.5)


def test_doy_encoding():
    s, c = doy_encoding(91.3125)
    assert s == pytest.approx(1.0, abs=1e-9) and c == pytest.approx(0.0, abs=1e-9)
    assert doy_of(dt.date(2015, 2, 1)) == 32
    assert doy_of((dt.date(2016, 12, 31) - dt.date(1970, 1, 1)).days) == 366


def test_stats_json_keys(tmp_path):
    s = unit_stats(NDVI=(0.2, 0.0))
    doc = s.to_json()
    assert set(doc["VV_DB"]) == {"mean", "std", "constant"}
    assert doc["NDVI"]["constant"] is True and doc["VV_DB"]["constant"] is False
    s.save(tmp_path / "s.json")
    back = ChannelStats.load(tmp_path / "s.json")
    assert back == s
    json.loads((tmp_path / "s.json").read_text())


def test_stats_reject_negative_std():
    with pytest.raises(ValidationError):
        ChannelStats.from_json({"VV_DB": {"mean": 0, "std": -1, "constant": False}})


def _stack_inputs(vv=-12.0, vh=-19.0):
    return {ChannelId.VV_DB: full(vv), ChannelId.VH_DB: full(vh), ChannelId.INC_DEG: full(38.0),
            ChannelId.NIR: full(0.5), ChannelId.RED: full(0.1), ChannelId.GREEN: full(0.1),
            ChannelId.BLUE: full(0.05), ChannelId.RAIN_MM: full(3.0), ChannelId.SMC_LAG: full(0.2)}


def test_assemble_ae_zeroes_ground_channels():
    st_ = assemble_stack(_stack_inputs(), dt.date(2015, 4, 1), unit_stats(RAIN_MM=(1.0, 2.0)), Mode.AE)
    assert st_.channel_ids == FEATURE_CHANNELS
    for c in GROUND_CHANNELS:
        assert (st_[c].values == 0).all()
    fused = assemble_stack(_stack_inputs(), dt.date(2015, 4, 1), unit_stats(RAIN_MM=(1.0, 2.0)), Mode.FUSED)
    assert fused[ChannelId.RAIN_MM].values[0, 0] == pytest.approx(1.0)


def test_assemble_missing_polarisation_imputed_to_zero():
    stats = unit_stats(HH_DB=(-11.0, 2.0), HV_DB=(-18.0, 3.0))
    st_ = assemble_stack(_stack_inputs(), 16500, stats, Mode.FUSED)
    assert (st_[ChannelId.HH_DB].values == 0).all() and (st_[ChannelId.HV_DB].values == 0).all()
    assert any("HH_DB" in n for n in st_.notes) and any("HV_DB" in n for n in st_.notes)
    assert not any("VV_DB" in n for n in st_.notes)


def test_assemble_derives_ndvi_and_clock():
    st_ = assemble_stack(_stack_inputs(), dt.date(2015, 1, 1), unit_stats(), Mode.FUSED)
    assert st_[ChannelId.NDVI].values[0, 0] == pytest.approx(0.4 / 0.6, abs=1e-6)
    s, c = doy_encoding(1)
    assert st_[ChannelId.DOY_SIN].values[0, 0] == pytest.approx(s, abs=1e-6)
    assert st_[ChannelId.DOY_COS].values[0, 0] == pytest.approx(c, abs=1e-6)


def test_assemble_order_independent_of_input_order():
    inputs = _stack_inputs()
    a = assemble_stack(inputs, 16500, unit_stats(), Mode.FUSED)
    b = assemble_stack(dict(reversed(list(inputs.items()))), 16500, unit_stats(), Mode.FUSED)
    assert a.channel_ids == b.channel_ids == FEATURE_CHANNELS
    assert np.array_equal(a.array(), b.array())


def test_assemble_errors():
    with pytest.raises(ArgumentError):
        assemble_stack({ChannelId.VV_DB: full(1), ChannelId.VH_DB: full(1, GridGeo(2, 2))}, 0, unit_stats(),
                       Mode.AE)
    s = unit_stats()
    del s[ChannelId.NIR]
    with pytest.raises(ValidationError):
        assemble_stack(_stack_inputs(), 0, s, Mode.AE)


def test_constant_channel_normalizes_to_zero():
    raw = np.zeros((2, 14, 2, 2), np.float32)
    raw[:, channel_index(ChannelId.NIR)] = 0.7
    z = normalize(raw, compute_stats(raw), Mode.FUSED)
    assert (z == 0).all()


def test_zscore_moments():
    r = np.random.default_rng(0)
    raw = r.normal(5.0, 3.0, size=(50, 14, 4, 4)).astype(np.float32)
    raw[r.random(raw.shape) < 0.1] = np.nan
    raw[:, channel_index(ChannelId.HH_DB)] = np.nan
    stats = compute_stats(raw)
    assert stats[ChannelId.HH_DB].constant
    z = normalize(raw, stats, Mode.FUSED)
    for c in FEATURE_CHANNELS:
        i = channel_index(c)
        if stats[c].constant:
            assert (z[:, i] == 0).all()
            continue
        vals = z[:, i][~np.isnan(raw[:, i])]
        assert abs(vals.mean()) < 1e-3 and abs(vals.std() - 1) < 1e-3


def test_idw_reproduces_site_values():
    geo = GridGeo(5, 4)
    xy = np.array([[0, 0], [4, 3]])
    vals = np.array([[0.1, 0.3], [np.nan, 0.2]])
    planes = interpolate_sites(vals, idw_weights(geo, xy), geo)
    assert planes[0, 0, 0] == pytest.approx(0.1) and planes[0, 3, 4] == pytest.approx(0.3)
    assert np.allclose(planes[1], 0.2)
    assert ((planes[0] >= 0.1 - 1e-6) & (planes[0] <= 0.3 + 1e-6)).all()
