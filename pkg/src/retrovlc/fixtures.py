"""Distortion fixture corpus and the RVLC waveform file format.

File layout: a 16-byte little-endian header ``{magic "RVLC", version u16,
reserved u16, sample_rate_hz f32, length u32}`` followed by ``length``
little-endian float32 samples.  Ground truth sits next to it in a ``.bits``
file with one ASCII ``0``/``1`` per line (payload bits, CRC excluded).
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, apply_channel, apply_tag_clock, snr_sigma
from .signal import (
    BasebandWaveform,
    LcdShapingParams,
    as_bits,
    bit_centers_us,
    build_frame,
    chip_boundaries_us,
    line_chips,
    synthesize_uplink_waveform,
)

MAGIC = b"RVLC"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHfI")

CASES = ("normal", "top_truncated", "bottom_truncated", "avg_drifted", "lcd_sawtooth",
         "clock_drift_1pct")
FIXTURE_SNR_DB = 20.0
PAYLOAD_BYTES = 16


# -- file format ---------------------------------------------------------------

def write_waveform(path, wave: BasebandWaveform) -> None:
    x = np.asarray(wave.samples, dtype="<f4")
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, 0, wave.sample_rate_hz, len(x)))
        f.write(x.tobytes())


def read_waveform(path) -> BasebandWaveform:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: shorter than the header")
    magic, version, _, fs, n = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = raw[HEADER.size:]
    if len(body) != 4 * n:
        raise ValueError(f"{path}: header says {n} samples, file holds {len(body) // 4}")
    return BasebandWaveform(np.frombuffer(body, dtype="<f4").astype(np.float64), float(fs))


def write_bits(path, bits) -> None:
    Path(path).write_text("".join(f"{b}\n" for b in as_bits(bits)))


def read_bits(path) -> np.ndarray:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if any(ln not in ("0", "1") for ln in lines):
        raise ValueError(f"{path}: bit file lines must be 0 or 1")
    return as_bits([int(ln) for ln in lines])


# -- cases -----------------------------------------------------------------------

@dataclass(frozen=True)
class FixtureCase:
    name: str
    shaping: LcdShapingParams = LcdShapingParams()
    clip_high: float | None = None
    clip_low: float | None = None
    drift_amplitude: float = 0.0
    drift_freq_hz: float = 5.0
    clock_ratio_k: float = 1.0
    pattern: str | None = None  # repeated payload bit pattern instead of random bytes


CASE_PARAMS = {
    "normal": FixtureCase("normal"),
    # AGC lag saturates the top or bottom of the swing
    "top_truncated": FixtureCase("top_truncated", clip_high=0.55),
    "bottom_truncated": FixtureCase("bottom_truncated", clip_low=0.7),
    # ambient brightness change moves the baseline
    "avg_drifted": FixtureCase("avg_drifted", drift_amplitude=0.6, drift_freq_hz=3.0),
    # slow shutter that never settles within a chip
    "lcd_sawtooth": FixtureCase("lcd_sawtooth", shaping=LcdShapingParams(700.0, 1000.0),
                                pattern="0110"),
    "clock_drift_1pct": FixtureCase("clock_drift_1pct", clock_ratio_k=1.01),
}


@dataclass
class Fixture:
    name: str
    wave: BasebandWaveform
    payload: np.ndarray
    bit_centers_us: np.ndarray = field(repr=False)


def _payload(case: FixtureCase, rng: np.random.Generator, n_bytes: int) -> np.ndarray:
    if case.pattern:
        reps = -(-8 * n_bytes // len(case.pattern))
        return as_bits([int(c) for c in (case.pattern * reps)[:8 * n_bytes]])
    return as_bits(np.unpackbits(rng.integers(0, 256, n_bytes, dtype=np.uint8)))


def make_fixture(name: str, seed: int = 0, snr_db: float | None = FIXTURE_SNR_DB,
                 n_bytes: int = PAYLOAD_BYTES, sample_rate_hz: float = 20_000.0) -> Fixture:
    """Build one distortion case; ``snr_db=None`` leaves out the noise."""
    case = CASE_PARAMS[name]
    ss = np.random.SeedSequence([seed, CASES.index(name)])
    payload_rng, channel_seed = np.random.default_rng(ss), int(ss.generate_state(1)[0])
    frame = build_frame(_payload(case, payload_rng, n_bytes))
    chips = line_chips(frame)
    nominal = chip_boundaries_us(len(chips), frame.chip_period_us)
    bounds = apply_tag_clock(nominal, ChannelConfig(clock_ratio_k=case.clock_ratio_k))
    clean = synthesize_uplink_waveform(frame, case.shaping, sample_rate_hz, boundaries_us=bounds)
    sigma = 0.0 if snr_db is None else snr_sigma(clean, snr_db)
    cfg = ChannelConfig(awgn_sigma=sigma, drift_amplitude=case.drift_amplitude,
                        drift_freq_hz=case.drift_freq_hz, clip_high=case.clip_high,
                        clip_low=case.clip_low, seed=channel_seed)
    wave = apply_channel(clean, cfg)
    return Fixture(name, wave, frame.payload, bit_centers_us(bounds, frame.n_bits))


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def gen_fixtures(out_dir, seed: int = 0, snr_db: float = FIXTURE_SNR_DB) -> dict:
    """Write every case plus a ``corpus.json`` index; returns the index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {"format_version": FORMAT_VERSION, "seed": seed, "snr_db": snr_db, "cases": {}}
    for name in CASES:
        fx = make_fixture(name, seed, snr_db)
        wav, bits = out / f"{name}.rvlc", out / f"{name}.bits"
        write_waveform(wav, fx.wave)
        write_bits(bits, fx.payload)
        index["cases"][name] = {"waveform": wav.name, "bits": bits.name,
                                "sha256": sha256_file(wav), "bits_sha256": sha256_file(bits),
                                "samples": len(fx.wave), "payload_bits": len(fx.payload)}
    (out / "corpus.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index


def load_corpus(corpus_dir) -> dict[str, tuple[BasebandWaveform, np.ndarray]]:
    d = Path(corpus_dir)
    index = json.loads((d / "corpus.json").read_text())
    return {name: (read_waveform(d / e["waveform"]), read_bits(d / e["bits"]))
            for name, e in sorted(index["cases"].items())}
