import math

import pytest
from hypothesis import given, strategies as st

from vilsim.track import (SpeedZone, TrackMap, VehicleState, decel_distance, default_track, gap_ahead,
                          make_track, track_from_config)


def test_default_geometry(track):
    assert track.circuit_length == pytest.approx(3100 + math.pi * 95, abs=1e-9)
    assert track.circuit_length == pytest.approx(3398.45, abs=0.01)
    assert len(track.zones) == 4
    assert track.zones[0].v_limit == 22.3
    assert track.zones[1].v_limit == 7.0
    assert [z.kind for z in track.zones] == ["straight", "uturn", "straight", "uturn"]


@pytest.mark.parametrize("fs, ls, length, expected", [
    (10.0, 40.0, 0.0, 30.0),
    (3390.0, 5.0, 0.0, None),
    (100.0, 100.0, 0.0, 0.0),
])
def test_gap_ahead(track, fs, ls, length, expected):
    g = gap_ahead(VehicleState(s=fs), VehicleState(s=ls), track, length)
    if expected is None:
        expected = track.circuit_length - 3390.0 + 5.0
        assert g == pytest.approx(13.45, abs=0.01)
    assert g == pytest.approx(expected)


def test_gap_ahead_subtracts_vehicle_length(track):
    assert gap_ahead(VehicleState(s=10), VehicleState(s=40), track) == pytest.approx(25.0)


def test_decel_distance():
    assert decel_distance(22.3, 7.0, -2.0) == pytest.approx(112.0725, abs=1e-4)
    assert decel_distance(5.0, 5.0, -2.0) == 0.0
    assert decel_distance(10.0, 0.0, -2.0) == pytest.approx(25.0)
    with pytest.raises(ValueError):
        decel_distance(10.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        decel_distance(5.0, 10.0, -2.0)


def test_zone_lookup_and_wrap(track):
    L = track.circuit_length
    assert track.limit_at(0.0) == 22.3
    assert track.limit_at(1549.9) == 22.3
    assert track.limit_at(1550.0) == 7.0
    assert track.limit_at(L - 1.0) == 7.0
    assert track.limit_at(L + 10.0) == 22.3
    assert track.wrap(-1e-18) == 0.0
    assert track.wrap(-1.0) == pytest.approx(L - 1.0)


def test_envelope_limit(track):
    # far upstream the straight limit applies
    assert track.envelope_limit(100.0) == 22.3
    # the envelope reaches the turn limit at the zone boundary
    assert track.envelope_limit(1550.0 - 1e-9) == pytest.approx(7.0, abs=1e-4)
    d = 50.0
    assert track.envelope_limit(1550.0 - d) == pytest.approx(math.sqrt(49.0 + 4.0 * d))
    # the constant-deceleration envelope starts exactly delta-s before the turn
    assert track.envelope_limit(1550.0 - decel_distance(22.3, 7.0, -2.0) - 1e-6) == pytest.approx(22.3)


@given(st.floats(0.0, 3398.0))
def test_xy_project_round_trip(s):
    track = default_track()
    x, y, _ = track.xy(s)
    back = track.project(x, y)
    d = abs(back - s)
    assert min(d, track.circuit_length - d) < 1e-6


@given(st.floats(0.0, 3398.0), st.floats(0.0, 500.0))
def test_advance_counts_laps(s0, ds):
    track = default_track()
    st0 = VehicleState(s=s0, lap=2)
    st1 = st0.advance(ds, track)
    assert st1.odometer(track) == pytest.approx(st0.odometer(track) + ds, abs=1e-6)
    assert 0.0 <= st1.s < track.circuit_length


def test_invalid_tracks():
    with pytest.raises(ValueError):
        SpeedZone(10.0, 5.0, 7.0)
    with pytest.raises(ValueError):
        SpeedZone(0.0, 5.0, 0.0)
    with pytest.raises(ValueError):
        TrackMap(10.0, (SpeedZone(0.0, 5.0, 7.0),))
    with pytest.raises(ValueError):
        make_track(a_c=1.0)


def test_track_from_config():
    t = track_from_config({"v_turn": "6.0", "straight_length": "1000"})
    assert t.zones[1].v_limit == 6.0
    assert t.circuit_length == pytest.approx(2000 + math.pi * 95)
