import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from retrovlc import decoder as dec
from retrovlc.channel import ChannelConfig, apply_channel, apply_tag_clock, snr_sigma
from retrovlc.errors import PreambleMissing, SampleRateTooLow
from retrovlc.signal import (
    BasebandWaveform,
    LcdShapingParams,
    bit_centers_us,
    build_frame,
    chip_boundaries_us,
    frame_from_bytes,
    line_chips,
    manchester_encode,
    rectangular_chips,
    synthesize_uplink_waveform,
)


def _wave(frame, k=1.0, shaping=None, fs=20_000.0):
    chips = line_chips(frame)
    b = apply_tag_clock(chip_boundaries_us(len(chips), frame.chip_period_us),
                        ChannelConfig(clock_ratio_k=k))
    return synthesize_uplink_waveform(frame, shaping, fs, boundaries_us=b), b


def test_template_bank_complete():
    bank = dec.TemplateBank.build()
    assert len(bank) == 8
    assert {tuple(p) for p in bank.patterns} == set(itertools.product((0, 1), repeat=3))
    np.testing.assert_allclose(bank.templates.mean(axis=1), 0.0, atol=1e-12)
    assert bank.templates.shape[1] == 3 * 2 * 20


@pytest.mark.parametrize("tau", [(50.0, 50.0), (300.0, 450.0), (500.0, 700.0), (700.0, 1000.0)])
def test_template_bank_picks_each_pattern(tau):
    bank = dec.TemplateBank.build()
    shaping = LcdShapingParams(*tau)
    from retrovlc.signal import synthesize_chips
    for i, p in enumerate(bank.patterns):
        # settle on the middle pattern's neighbours, then look at the three bits
        chips = np.concatenate([manchester_encode(p).chips])
        w = synthesize_chips(chips, chip_boundaries_us(6, 1000.0), shaping, 20_000.0)
        assert bank.best_match(w.samples) == i


def test_clean_round_trip_and_result_shape():
    f = frame_from_bytes(b"tag-01")
    w, b = _wave(f)
    r = dec.decode_swmsmf(w, None, None, len(f.payload), truth_centers_us=bit_centers_us(b, f.n_bits))
    assert r.crc_ok and r.bit_errors(f.bits) == 0
    assert bytes(np.packbits(r.payload)) == b"tag-01"
    assert len(r.per_bit_timing_error_us) == f.n_bits
    assert 0.9 <= r.k_hat <= 1.1
    plain = dec.decode_swmsmf(w, None, None, len(f.payload))
    assert plain.per_bit_timing_error_us.size == 0


def test_payload_length_inferred_at_nominal_clock():
    f = frame_from_bytes(bytes(range(8)))
    w, _ = _wave(f)
    r = dec.decode_swmsmf(w)
    assert r.crc_ok and len(r.payload) == 64


@pytest.mark.parametrize("k", [0.99, 1.0, 1.01, 1.03, 1.05])
def test_decodes_under_clock_offset(k):
    rng = np.random.default_rng(7)
    f = build_frame(rng.integers(0, 2, 256))
    w, b = _wave(f, k)
    r = dec.decode_swmsmf(w, None, None, 256, truth_centers_us=bit_centers_us(b, f.n_bits))
    assert r.bit_errors(f.bits) == 0 and r.crc_ok
    assert r.k_hat == pytest.approx(k, abs=2e-3)


def test_timing_error_shrinks_under_drift():
    rng = np.random.default_rng(11)
    f = build_frame(rng.integers(0, 2, 256))
    w, b = _wave(f, 1.01, LcdShapingParams(1e-3, 1e-3))
    truth = bit_centers_us(b, f.n_bits)
    r = dec.decode_swmsmf(w, None, None, 256, truth_centers_us=truth)
    e = np.abs(r.per_bit_timing_error_us)
    assert e[-20:].mean() < e[:3].mean()


def test_predicted_centres_increase():
    f = build_frame(np.random.default_rng(2).integers(0, 2, 64))
    w, b = _wave(f, 1.02)
    r = dec.decode_swmsmf(w, None, None, 64, truth_centers_us=bit_centers_us(b, f.n_bits))
    centres = bit_centers_us(b, f.n_bits) + r.per_bit_timing_error_us
    assert np.all(np.diff(centres) > 0)


def test_clock_estimate_error_closed_form():
    err = dec.lemma1_error_trace(512, 1.01, 50.0)
    i = np.arange(512)
    # anchor error times (1 - s[i+1]/s[i]) with s[i] = (i+2) bit periods
    np.testing.assert_allclose(err, -50.0 / (i + 2), rtol=0, atol=1e-8)
    assert abs(err[511]) / abs(err[10]) == pytest.approx(12 / 513, rel=1e-6)


@given(st.floats(0.9, 1.1), st.floats(-200, 200).filter(lambda x: abs(x) > 1e-3))
def test_clock_estimate_error_monotone(k, e0):
    err = np.abs(dec.lemma1_error_trace(64, k, e0))
    assert np.all(np.diff(err) < 0)


def test_preamble_on_rectangular_frame():
    f = frame_from_bytes(b"ab")
    chips = line_chips(f)
    body = rectangular_chips(chips, chip_boundaries_us(len(chips), 1000.0), LcdShapingParams(),
                             20_000.0)
    w = BasebandWaveform(np.concatenate([np.zeros(1194), body.samples]), 20_000.0)
    idx, q = dec.detect_preamble(w)
    assert idx == 1234 and q > 0.95


def test_preamble_rejects_noise():
    hits = 0
    for s in range(200):
        w = BasebandWaveform(np.random.default_rng(s).normal(size=4000), 20_000.0)
        try:
            dec.detect_preamble(w)
            hits += 1
        except dec.NoPreamble:
            pass
    assert hits == 0
    with pytest.raises(PreambleMissing):
        dec.decode_swmsmf(BasebandWaveform(np.random.default_rng(0).normal(size=4000), 20_000.0))


def test_preamble_accuracy_at_10db():
    rng = np.random.default_rng(5)
    misses = 0
    for s in range(300):
        f = frame_from_bytes(bytes(rng.integers(0, 256, 4, dtype=np.uint8)))
        clean, _ = _wave(f)
        clean = BasebandWaveform(np.concatenate([np.zeros(1234), clean.samples]), 20_000.0)
        ref, _ = dec.detect_preamble(clean)
        noisy = apply_channel(clean, ChannelConfig(awgn_sigma=snr_sigma(clean, 10.0), seed=s))
        idx, _ = dec.detect_preamble(noisy)
        misses += abs(idx - ref) > 2
    assert misses <= 3


def test_sample_rate_floor():
    f = frame_from_bytes(b"x")
    w, _ = _wave(f, fs=10_000.0)
    with pytest.raises(SampleRateTooLow):
        dec.decode_swmsmf(w)


def test_decoder_deterministic():
    f = frame_from_bytes(b"same")
    w, _ = _wave(f)
    w = apply_channel(w, ChannelConfig(awgn_sigma=0.1, seed=1))
    a, b = dec.decode_swmsmf(w, None, None, 32), dec.decode_swmsmf(w, None, None, 32)
    np.testing.assert_array_equal(a.bits, b.bits)
    assert a.k_hat == b.k_hat


@pytest.mark.parametrize("fn", [dec.decode_baseline_average, dec.decode_baseline_edge,
                                dec.decode_baseline_single_symbol])
def test_baselines_clean(fn):
    f = frame_from_bytes(b"base")
    w, b = _wave(f)
    r = fn(w, None, 32, truth_centers_us=bit_centers_us(b, f.n_bits))
    assert r.bit_errors(f.bits) == 0
    assert len(r.per_bit_timing_error_us) == f.n_bits


def test_decode_many_matches_single():
    frames = [frame_from_bytes(bytes([i, i + 1])) for i in range(5)]
    waves = [_wave(f)[0] for f in frames]
    out = dec.decode_many(waves, None, None, 16)
    assert all(r.crc_ok and r.bit_errors(f.bits) == 0 for r, f in zip(out, frames))


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=1, max_size=64))
def test_round_trip_property(data):
    f = frame_from_bytes(data)
    w, _ = _wave(f)
    r = dec.decode_swmsmf(w, None, None, len(f.payload))
    assert r.crc_ok and bytes(np.packbits(r.payload)) == data
