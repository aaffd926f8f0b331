import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_collection
from gridcast.errors import DataError
from gridcast.featurizer import (
    ExogenousFeature,
    FeatureSpec,
    build_pool,
    build_samples,
    ema,
    heterogeneity_profile,
)
from gridcast.synthgen import INDUSTRIAL, RESIDENTIAL, generate_collection


def _col(s, name):
    return s.X[:, s.feature_names.index(name)]


def test_row_count_and_first_target(rng):
    c = make_collection({"s": rng.uniform(1, 2, 200)})
    s = build_samples(c, "s")
    assert len(s) == 32 and s.p == len(FeatureSpec().feature_names())
    assert s.target_time[0] == np.datetime64("2024-01-08T00", "h")
    np.testing.assert_array_equal(s.y, c.series["s"][168:])


def test_short_series_rejected():
    with pytest.raises(DataError, match="too short"):
        build_samples(make_collection({"s": np.ones(168)}), "s")


def test_lags_and_moving_averages_by_hand(rng):
    y = rng.uniform(0, 1, 250)
    s = build_samples(make_collection({"s": y}), "s")
    for row in (0, 17, 81):
        tau = 168 + row
        assert _col(s, "lag_1")[row] == y[tau - 1]
        assert _col(s, "lag_168")[row] == y[tau - 168]
        assert _col(s, "lag_24_pow3")[row] == pytest.approx(y[tau - 24] ** 3, rel=1e-15)
        assert _col(s, "mave_24")[row] == pytest.approx(y[tau - 24 : tau].mean(), rel=1e-12)
        assert _col(s, "mave_168")[row] == pytest.approx(y[tau - 168 : tau].mean(), rel=1e-12)


def test_ema_recursion(rng):
    y = rng.uniform(0, 1, 50)
    span = 10
    a = 2 / (span + 1)
    expected = [y[0]]
    for v in y[1:]:
        expected.append(a * v + (1 - a) * expected[-1])
    np.testing.assert_allclose(ema(y, span), expected, rtol=1e-12)


def test_hour_encoding_at_six_am(rng):
    c = make_collection({"s": rng.uniform(1, 2, 200)})
    s = build_samples(c, "s")
    six = np.flatnonzero(pd.DatetimeIndex(s.target_time).hour == 6)[0]
    assert _col(s, "hour_sin")[six] == pytest.approx(1.0, abs=1e-12)
    assert _col(s, "hour_cos")[six] == pytest.approx(0.0, abs=1e-12)


def test_cyclic_pairs_on_unit_circle(rng):
    s = build_samples(make_collection({"s": rng.uniform(1, 2, 600)}), "s")
    for unit in ("hour", "dow", "month"):
        r = _col(s, f"{unit}_sin") ** 2 + _col(s, f"{unit}_cos") ** 2
        np.testing.assert_allclose(r, 1.0, atol=1e-12)


def test_holiday_and_pandemic_flags(rng):
    spec = FeatureSpec(holidays=("2024-01-08",), pandemic=("2024-01-09", "2024-01-09"))
    s = build_samples(make_collection({"s": rng.uniform(1, 2, 240)}), "s", spec)
    days = pd.DatetimeIndex(s.target_time).normalize()
    np.testing.assert_array_equal(_col(s, "holiday"), days == pd.Timestamp("2024-01-08"))
    np.testing.assert_array_equal(_col(s, "pandemic"), days == pd.Timestamp("2024-01-09"))


def test_exogenous_alignment(rng):
    n = 200
    temp = rng.normal(size=n)
    c = make_collection({"s": rng.uniform(1, 2, n)}, exogenous={"temperature": temp})
    spec = FeatureSpec(exogenous=(ExogenousFeature("temperature", "lagged", (1, 2)),), interactions=())
    s = build_samples(c, "s", spec)
    np.testing.assert_array_equal(_col(s, "temperature"), temp[167:-1])
    np.testing.assert_allclose(_col(s, "temperature_pow2"), temp[167:-1] ** 2)
    assert s.target_time_columns == frozenset()
    target = build_samples(c, "s")
    np.testing.assert_array_equal(_col(target, "temperature"), temp[168:])
    assert "temperature_x_hour_sin" in target.target_time_columns


def test_missing_channel():
    c = make_collection({"s": np.arange(200.0)}, exogenous={})
    with pytest.raises(DataError, match="temperature"):
        build_samples(c, "s")


def test_determinism(rng):
    c = make_collection({"b": rng.uniform(1, 2, 300), "a": rng.uniform(1, 2, 300)})
    one, two = build_pool(c), build_pool(c)
    assert one.X.tobytes() == two.X.tobytes()
    assert list(one.series_ids[:1]) == ["a"] and len(one) == 2 * (300 - 168)


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"lags": (1, 200)}, "exceeds window"),
        ({"lags": (0,), "poly_lags": ()}, ">= 1"),
        ({"poly_lags": (5,)}, "polynomial"),
        ({"calendar": ("fortnight",)}, "calendar"),
        ({"interactions": (("lag_1", "nope"),)}, "interaction"),
    ],
)
def test_spec_validation(kwargs, match):
    with pytest.raises(DataError, match=match):
        FeatureSpec(**kwargs)


def test_spec_hash_and_round_trip():
    spec = FeatureSpec(window=48, lags=(1, 2, 24), poly_lags=(1,), ma_windows=(3, 24), interactions=())
    assert FeatureSpec.from_dict(spec.to_dict()) == spec
    assert FeatureSpec.from_dict(spec.to_dict()).spec_hash() == spec.spec_hash()
    assert spec.spec_hash() != FeatureSpec().spec_hash()


# ------------------------------------------------------------ heterogeneity


START = pd.Timestamp("2024-01-01", tz="UTC")  # a Monday


def test_constant_series_profile():
    assert heterogeneity_profile(np.full(24 * 14, 5.0), START).as_tuple() == (0.0, 0.0, 1.0, 1.0)


def test_profile_by_hand():
    hours = np.arange(24 * 14)
    y = np.where(hours % 24 < 6, 1.0, 2.0)
    p = heterogeneity_profile(y, START)
    mean = y.mean()
    assert p.night_to_day == pytest.approx(0.5)
    assert p.weekend_to_weekday == pytest.approx(1.0)
    hourly = np.r_[np.ones(6), 2 * np.ones(18)]
    assert p.seasonality_index == pytest.approx(hourly.std() / mean)
    assert p.total_variation == pytest.approx(np.abs(np.diff(y)).mean() / mean)


def test_profile_errors():
    with pytest.raises(DataError, match="14 days"):
        heterogeneity_profile(np.ones(100), START)
    with pytest.raises(DataError, match="positive mean"):
        heterogeneity_profile(-np.ones(400), START)


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_profile_scale_invariant(a):
    y = 10 + np.sin(np.arange(24 * 14) / 3.0) + np.arange(24 * 14) % 7
    base = np.array(heterogeneity_profile(y, START).as_tuple())
    scaled = np.array(heterogeneity_profile(a * y, START).as_tuple())
    np.testing.assert_allclose(scaled, base, rtol=1e-12)


def test_residential_more_seasonal_than_industrial():
    c, truth = generate_collection([RESIDENTIAL, INDUSTRIAL], 5, length_hours=24 * 7 * 4, seed=3)
    si = {sid: heterogeneity_profile(c.series[sid], c.start).seasonality_index for sid in c.ids}
    res = np.mean([v for k, v in si.items() if truth.archetype[k] == "residential"])
    ind = np.mean([v for k, v in si.items() if truth.archetype[k] == "industrial"])
    assert res >= 3 * ind
