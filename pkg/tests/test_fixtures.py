import json

import numpy as np
import pytest

from retrovlc.decoder import decode_swmsmf
from retrovlc.fixtures import (
    CASES,
    HEADER,
    MAGIC,
    gen_fixtures,
    load_corpus,
    make_fixture,
    read_bits,
    read_waveform,
    write_bits,
    write_waveform,
)
from retrovlc.signal import BasebandWaveform, build_frame


def test_waveform_file_layout(tmp_path):
    w = BasebandWaveform(np.array([0.0, 0.5, 1.0]), 20_000.0)
    p = tmp_path / "w.rvlc"
    write_waveform(p, w)
    raw = p.read_bytes()
    assert raw[:4] == MAGIC and len(raw) == HEADER.size + 12
    back = read_waveform(p)
    assert back.sample_rate_hz == 20_000.0
    np.testing.assert_array_equal(back.samples, w.samples)


def test_waveform_file_rejects_damage(tmp_path):
    p = tmp_path / "w.rvlc"
    write_waveform(p, BasebandWaveform(np.zeros(4), 20_000.0))
    raw = p.read_bytes()
    (tmp_path / "a.rvlc").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "b.rvlc").write_bytes(raw[:-4])
    for name in ("a.rvlc", "b.rvlc"):
        with pytest.raises(ValueError):
            read_waveform(tmp_path / name)


def test_bits_file(tmp_path):
    p = tmp_path / "x.bits"
    write_bits(p, [1, 0, 1])
    assert p.read_text() == "1\n0\n1\n"
    assert list(read_bits(p)) == [1, 0, 1]
    p.write_text("1\n2\n")
    with pytest.raises(ValueError):
        read_bits(p)


def test_regeneration_byte_identical(tmp_path):
    a = gen_fixtures(tmp_path / "a", seed=3)
    b = gen_fixtures(tmp_path / "b", seed=3)
    assert a == b
    assert sorted(a["cases"]) == sorted(CASES)
    assert (tmp_path / "a" / "corpus.json").read_bytes() == (tmp_path / "b" / "corpus.json").read_bytes()
    c = gen_fixtures(tmp_path / "c", seed=4)
    assert c["cases"]["normal"]["sha256"] != a["cases"]["normal"]["sha256"]


def test_corpus_decodes_exactly(tmp_path):
    gen_fixtures(tmp_path)
    corpus = load_corpus(tmp_path)
    assert len(corpus) == 6
    for name, (wave, payload) in corpus.items():
        r = decode_swmsmf(wave, None, None, len(payload))
        assert r.crc_ok and r.bit_errors(build_frame(payload).bits) == 0, name


def test_cases_distort_as_named():
    clean = make_fixture("normal", 0, None).wave.samples
    top = make_fixture("top_truncated", 0, None).wave.samples
    bottom = make_fixture("bottom_truncated", 0, None).wave.samples
    assert clean.max() > 0.9 and top.max() <= 0.55
    assert clean.min() < 0.1 and bottom.min() >= 0.7
    drift = make_fixture("avg_drifted", 0, None)
    assert abs(np.mean(drift.wave.samples) - np.mean(clean)) > 0.01 or drift.wave.samples.min() < -0.1
    k = make_fixture("clock_drift_1pct", 0, None)
    assert np.diff(k.bit_centers_us).mean() == pytest.approx(2020.0)
    saw = make_fixture("lcd_sawtooth", 0, None)
    assert "".join(map(str, saw.payload[:8])) == "01100110"


def test_corpus_index_is_json(tmp_path):
    gen_fixtures(tmp_path, seed=1, snr_db=15.0)
    index = json.loads((tmp_path / "corpus.json").read_text())
    assert index["snr_db"] == 15.0 and index["format_version"] == 1
