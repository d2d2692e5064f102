import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from retrovlc.channel import (
    ChannelConfig,
    GeometryConfig,
    apply_channel,
    apply_tag_clock,
    clip,
    eavesdrop_map,
    eavesdrop_power_dbm,
    received_power_dbm,
    sniffer_detects,
    snr_sigma,
)
from retrovlc.errors import ClockNotMonotone
from retrovlc.experiments import fit_path_loss_exponent
from retrovlc.signal import BasebandWaveform


@given(st.floats(2.0, 4.0), st.floats(0.1, 5.0), st.floats(1.01, 3.0))
def test_power_law(n, d, ratio):
    cfg = ChannelConfig(path_loss_exponent=n)
    p1 = received_power_dbm(cfg, GeometryConfig(distance_m=d))
    p2 = received_power_dbm(cfg, GeometryConfig(distance_m=d * ratio))
    assert p1 - p2 == pytest.approx(10 * n * np.log10(ratio))


def test_reference_point():
    cfg = ChannelConfig()
    assert received_power_dbm(cfg, GeometryConfig(distance_m=1.5)) == pytest.approx(-80.0)


def test_angle_breakpoint():
    cfg = ChannelConfig()
    p0 = received_power_dbm(cfg, GeometryConfig())
    assert received_power_dbm(cfg, GeometryConfig(incidence_angle_deg=20.0)) == p0
    assert received_power_dbm(cfg, GeometryConfig(incidence_angle_deg=30.0)) == pytest.approx(p0 - 10)


def test_config_validation():
    for bad in ({"path_loss_exponent": 1.5}, {"clock_ratio_k": 1.2}, {"ref_distance_m": 0.0},
                {"clip_low": 0.5, "clip_high": 0.4}):
        with pytest.raises(ValueError):
            ChannelConfig(**bad)
    with pytest.raises(ValueError):
        GeometryConfig(incidence_angle_deg=90.0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50), st.floats(-1, 0), st.floats(0.1, 1))
def test_clip_idempotent(xs, lo, hi):
    x = np.array(xs)
    once = clip(x, lo, hi)
    np.testing.assert_array_equal(clip(once, lo, hi), once)
    assert once.min() >= lo and once.max() <= hi


def test_identity_channel():
    w = BasebandWaveform(np.linspace(0, 1, 100), 20_000.0)
    np.testing.assert_array_equal(apply_channel(w, ChannelConfig()).samples, w.samples)


def test_channel_deterministic_in_seed():
    w = BasebandWaveform(np.zeros(500), 20_000.0)
    a = apply_channel(w, ChannelConfig(awgn_sigma=0.1, seed=3)).samples
    b = apply_channel(w, ChannelConfig(awgn_sigma=0.1, seed=3)).samples
    c = apply_channel(w, ChannelConfig(awgn_sigma=0.1, seed=4)).samples
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_snr_sigma():
    w = BasebandWaveform(np.tile([0.0, 1.0], 1000), 20_000.0)
    assert snr_sigma(w, 0.0) == pytest.approx(0.5)
    assert snr_sigma(w, 20.0) == pytest.approx(0.05)


@given(st.floats(0.95, 1.05), st.floats(-2e-3, 2e-3), st.floats(0, 100))
def test_tag_clock_is_integral_of_ratio(k0, rate, offset):
    cfg = ChannelConfig(clock_ratio_k=k0, clock_drift_rate=rate, clock_offset_us=offset)
    T = np.array([0.0, 1e4, 5e4, 2e5])
    got = apply_tag_clock(T, cfg)
    for Ti, gi in zip(T, got):
        ref = offset + quad(lambda s: k0 + rate * 1e-6 * s, 0.0, Ti)[0]
        assert gi == pytest.approx(ref, rel=1e-9, abs=1e-6)
    assert np.all(np.diff(got) > 0)


def test_tag_clock_must_stay_monotone():
    with pytest.raises(ClockNotMonotone):
        apply_tag_clock([0.0, 2e6], ChannelConfig(clock_drift_rate=-1.0))


def test_fit_recovers_exponent():
    d = np.linspace(0.3, 3.0, 28)
    for n in (2.0, 2.5, 3.0, 4.0):
        p = [received_power_dbm(ChannelConfig(path_loss_exponent=n), GeometryConfig(distance_m=x))
             for x in d]
        assert fit_path_loss_exponent(d, p) == pytest.approx(n, abs=1e-9)


def test_sniffer_on_axis_at_reader_matches_link():
    cfg, geo = ChannelConfig(), GeometryConfig(distance_m=0.6)
    assert eavesdrop_power_dbm(cfg, geo, 0.0, 0.6) == pytest.approx(received_power_dbm(cfg, geo))


def test_sniffer_far_off_axis_is_blind():
    cfg, geo = ChannelConfig(), GeometryConfig(distance_m=0.6)
    assert not sniffer_detects(cfg, geo, 30.0, 0.6)
    assert sniffer_detects(cfg, geo, 0.0, 1.0)


def test_eavesdrop_area_grows_with_gain():
    cfg, geo = ChannelConfig(), GeometryConfig(distance_m=0.6)
    angles, dists = np.arange(-40, 41, 1.0), 0.6 + np.arange(0, 4.01, 0.05)
    areas = [eavesdrop_map(cfg, geo, angles, dists, gain_db=g).area_m2() for g in (0, 2, 4, 6, 8)]
    assert all(b > a for a, b in zip(areas, areas[1:]))
