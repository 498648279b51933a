import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fcreg.volume import (
    BrainMask,
    DisplacementField,
    LabelVolume,
    ScalarVolume,
    TimeSeriesVolume,
    normalize_intensity,
    time_series_at,
    volume_stats,
)

from . import oracles

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_stats_constant():
    assert volume_stats(ScalarVolume(np.full((3, 4, 5), 5.0))) == (5.0, 5.0, 5.0, 0.0)


def test_stats_population_std():
    v = ScalarVolume(np.array([1.0, 2.0, 3.0]).reshape(3, 1, 1))
    lo, hi, mean, std = volume_stats(v)
    assert (lo, hi, mean) == (1.0, 3.0, 2.0)
    assert std == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    assert std == pytest.approx(0.8165, abs=1e-4)


def test_stats_empty_mask():
    v = ScalarVolume(np.ones((2, 2, 2)))
    with pytest.raises(ValueError, match="empty domain"):
        volume_stats(v, BrainMask(np.zeros((2, 2, 2), bool)))


def test_stats_mask_selects():
    data = np.arange(8.0).reshape(2, 2, 2)
    mask = np.zeros((2, 2, 2), bool)
    mask[0, 0, :] = True
    assert volume_stats(ScalarVolume(data), BrainMask(mask))[:3] == (0.0, 1.0, 0.5)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(*[st.integers(1, 8)] * 3), elements=finite))
def test_stats_match_two_pass_oracle(data):
    got = volume_stats(ScalarVolume(data))
    want = oracles.stats(data.ravel().tolist())
    for g, w in zip(got, want):
        assert g == pytest.approx(w, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("vals, want", [
    ([0.0, 50.0, 100.0], [0.0, 0.5, 1.0]),
    ([-2.0, 0.0, 2.0], [0.0, 0.5, 1.0]),
    ([7.0, 7.0, 7.0], [0.0, 0.0, 0.0]),
])
def test_normalize(vals, want):
    out = normalize_intensity(ScalarVolume(np.array(vals).reshape(3, 1, 1)))
    np.testing.assert_allclose(out.data.ravel(), want, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (4, 3, 2), elements=finite))
def test_normalize_range_and_idempotence(data):
    once = normalize_intensity(ScalarVolume(data))
    assert once.data.min() >= 0.0 and once.data.max() <= 1.0
    if data.max() > data.min():
        twice = normalize_intensity(once)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-12)


def test_time_series_read():
    v = TimeSeriesVolume(np.array([7.0, 8.0, 9.0]).reshape(1, 1, 1, 3))
    np.testing.assert_array_equal(time_series_at(v, (0, 0, 0)), [7.0, 8.0, 9.0])


@pytest.mark.parametrize("idx", [(1, 0, 0), (0, -1, 0), (0, 0, 5)])
def test_time_series_out_of_bounds(idx):
    v = TimeSeriesVolume(np.zeros((1, 2, 3, 4)))
    with pytest.raises(IndexError):
        time_series_at(v, idx)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2), st.integers(0, 3), st.integers(0, 4), st.integers(0, 5), finite)
def test_index_round_trip(x, y, z, t, value):
    data = np.zeros((3, 4, 5, 6))
    data[x, y, z, t] = value
    v = TimeSeriesVolume(data)
    assert v.data[x, y, z, t] == value
    assert time_series_at(v, (x, y, z))[t] == value


def test_containers_reject_bad_input():
    with pytest.raises(ValueError):
        ScalarVolume(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        TimeSeriesVolume(np.zeros((2, 2, 2, 1)))
    with pytest.raises(ValueError):
        DisplacementField(np.zeros((2, 2, 2, 2)))
    with pytest.raises(ValueError):
        LabelVolume(np.array([[[-1]]]))
    with pytest.raises(ValueError):
        LabelVolume(np.array([[[0.5]]]))


def test_containers_are_read_only():
    v = ScalarVolume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0
    src = np.zeros((2, 2, 2))
    ScalarVolume(src)
    src[0, 0, 0] = 1.0  # caller's array stays writable and is not aliased
