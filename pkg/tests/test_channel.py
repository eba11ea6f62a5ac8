import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wptsim.channel import (
    ChannelError,
    MediumMap,
    MediumSegment,
    Position,
    SegmentKind,
    air_loss,
    channel,
    compose_budget,
    dbm_to_watt,
    muscle_loss,
    one_way_segments,
    received_power_dbm,
    watt_to_dbm,
)


def test_air_loss_reference_points():
    # 915 MHz free-space endpoints: 31.67 dB at 1 m, 51.67 dB at 10 m.
    assert air_loss(1.0) == pytest.approx(31.67, abs=0.01)
    assert air_loss(10.0) == pytest.approx(51.67, abs=0.01)


def test_air_loss_inverse_square():
    # Doubling the distance adds exactly 20*log10(2) dB.
    assert air_loss(2.0) - air_loss(1.0) == pytest.approx(20 * math.log10(2), abs=1e-9)


def test_muscle_loss_slope():
    assert muscle_loss(0.02) == pytest.approx(9.2, abs=1e-9)
    assert muscle_loss(0.06) == pytest.approx(27.6, abs=1e-9)
    assert muscle_loss(0.0) == 0.0


def test_boundary_losses_are_asymmetric():
    assert MediumSegment(SegmentKind.SKIN_IN).loss_db() == 3.0
    assert MediumSegment(SegmentKind.SKIN_OUT).loss_db() == 5.0
    assert MediumSegment(SegmentKind.INSERTION).loss_db() == 30.0


def test_boundary_segments_reject_length():
    with pytest.raises(ChannelError):
        MediumSegment(SegmentKind.SKIN_IN, 0.1)


def test_compose_budget_is_additive():
    segs = [
        MediumSegment(SegmentKind.AIR, 1.0),
        MediumSegment(SegmentKind.SKIN_IN),
        MediumSegment(SegmentKind.MUSCLE, 0.02),
    ]
    b = compose_budget(segs)
    assert b.total_loss_db == pytest.approx(air_loss(1.0) + 3.0 + 9.2)
    assert b.path_length_m == pytest.approx(1.02)


def test_budget_phase_matches_path_length():
    segs = [MediumSegment(SegmentKind.AIR, 1.25)]
    b = compose_budget(segs, freq_hz=915e6)
    lam = 3.0e8 / 915e6
    assert b.phase_rad == pytest.approx((2 * math.pi * 1.25 / lam) % (2 * math.pi))


def test_received_power_subtracts_loss():
    b = compose_budget([MediumSegment(SegmentKind.AIR, 1.0)])
    assert received_power_dbm(30.0, b) == pytest.approx(30.0 - air_loss(1.0))


def test_one_way_segment_order_depends_on_direction():
    m = MediumMap(muscle_depth_m=0.02)
    inn = one_way_segments(1.0, m, inbound=True)
    out = one_way_segments(1.0, m, inbound=False)
    assert [s.kind for s in inn] == [
        SegmentKind.AIR, SegmentKind.SKIN_IN, SegmentKind.MUSCLE]
    assert [s.kind for s in out] == [
        SegmentKind.MUSCLE, SegmentKind.SKIN_OUT, SegmentKind.AIR]


def test_one_way_segments_air_only():
    segs = one_way_segments(2.0, MediumMap(), inbound=True)
    assert len(segs) == 1 and segs[0].kind is SegmentKind.AIR


def test_depth_must_not_exceed_distance():
    with pytest.raises(ChannelError):
        one_way_segments(0.04, MediumMap(muscle_depth_m=0.05), inbound=True)


def test_channel_gain_matches_budget():
    tx, rx = Position(0, 0, 0), Position(1.0, 0, 0)
    m = MediumMap(muscle_depth_m=0.02)
    c = channel(tx, rx, m, tx_gain_dbi=4.0, inbound=True)
    loss = air_loss(0.98) + 3.0 + 9.2
    assert c.gain == pytest.approx(10 ** (-loss / 20) * 10 ** (4.0 / 20))


def test_channel_static_phase_offset():
    tx, rx = Position(0, 0, 0), Position(0, 0, 1.0)
    c0 = channel(tx, rx, static_phase_rad=0.0)
    c1 = channel(tx, rx, static_phase_rad=1.0)
    assert (c1.phase_rad - c0.phase_rad) % (2 * math.pi) == pytest.approx(1.0)


def test_channel_rejects_coincident_positions():
    p = Position(1, 2, 3)
    with pytest.raises(ChannelError):
        channel(p, p)


def test_position_distance():
    assert Position(0, 0, 0).distance_to(Position(3, 4, 0)) == pytest.approx(5.0)


def test_position_rejects_non_finite():
    with pytest.raises(ChannelError):
        Position(math.nan, 0, 0)


@given(st.floats(min_value=-120, max_value=40))
def test_dbm_watt_round_trip(p_dbm):
    assert watt_to_dbm(dbm_to_watt(p_dbm)) == pytest.approx(p_dbm, abs=1e-9)


def test_watt_to_dbm_of_zero():
    assert watt_to_dbm(0.0) == -math.inf


@given(st.floats(min_value=0.01, max_value=50), st.floats(min_value=1.01, max_value=4))
def test_air_loss_monotone_in_distance(d, factor):
    assert air_loss(d * factor) > air_loss(d)
