"""Logical-layer codecs, framing and uplink waveform synthesis.

Bits and chips are carried as read-only ``numpy.uint8`` arrays.  Manchester
polarity on the wire: a rising edge is a one, so bit 1 -> chips (0, 1) and
bit 0 -> chips (1, 0).

Waveforms use a sample-centre convention: sample ``n`` covers the interval
``[n/fs, (n+1)/fs)`` and holds the signal value at its midpoint.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    InvalidChipPair,
    OddBitCount,
    OddLength,
    PayloadNotByteAligned,
    SampleRateTooLow,
    UnclassifiablePeriod,
)

# Uplink defaults: 0.5 kbps Manchester -> 1 kchip/s.
DEFAULT_CHIP_PERIOD_US = 1000.0
DEFAULT_SAMPLE_RATE_HZ = 20_000.0

PREAMBLE_CHIPS = (1, 1, 1)
IDLE_CHIP = 0
LEAD_CHIPS = 2
FLUSH_CHIPS = 2
GUARD_CHIPS = 2  # idle after the flush so timing searches stay inside the capture

CRC8_POLY = 0x07
PERIOD_SYMBOLS_US = (185.0, 195.0, 205.0, 215.0)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def as_bits(bits: Iterable[int]) -> np.ndarray:
    """Validate and freeze a bit sequence."""
    arr = np.asarray(list(bits) if not isinstance(bits, np.ndarray) else bits)
    if arr.size == 0:
        return _frozen(np.zeros(0, dtype=np.uint8))
    if arr.ndim != 1 or not np.all((arr == 0) | (arr == 1)):
        raise ValueError("bits must be a flat sequence of 0/1")
    return _frozen(arr.astype(np.uint8))


@dataclass(frozen=True)
class ChipSequence:
    chips: np.ndarray
    chip_period_us: float = DEFAULT_CHIP_PERIOD_US

    def __post_init__(self):
        if self.chip_period_us <= 0:
            raise ValueError("chip_period_us must be positive")
        object.__setattr__(self, "chips", as_bits(self.chips))

    def __len__(self) -> int:
        return len(self.chips)

    @property
    def chip_rate_hz(self) -> float:
        return 1e6 / self.chip_period_us


@dataclass(frozen=True)
class BasebandWaveform:
    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or not np.all(np.isfinite(s)):
            raise ValueError("samples must be a finite 1-D array")
        object.__setattr__(self, "samples", _frozen(s.copy()))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_us(self) -> float:
        return len(self.samples) * 1e6 / self.sample_rate_hz

    def times_us(self) -> np.ndarray:
        return (np.arange(len(self.samples)) + 0.5) * 1e6 / self.sample_rate_hz


@dataclass(frozen=True)
class LcdShapingParams:
    """RC response of the LCD shutter; each chip relaxes exponentially toward its rail."""

    tau_charge_us: float = 300.0
    tau_discharge_us: float = 450.0
    v_high: float = 1.0
    v_low: float = 0.0

    def __post_init__(self):
        if self.tau_charge_us <= 0 or self.tau_discharge_us <= 0:
            raise ValueError("time constants must be positive")
        if self.v_high <= self.v_low:
            raise ValueError("v_high must exceed v_low")


@dataclass(frozen=True)
class Frame:
    preamble: ChipSequence
    payload: np.ndarray
    crc: int

    def __post_init__(self):
        object.__setattr__(self, "payload", as_bits(self.payload))

    @property
    def chip_period_us(self) -> float:
        return self.preamble.chip_period_us

    @property
    def bits(self) -> np.ndarray:
        """Payload followed by the CRC byte, MSB first."""
        return _frozen(np.concatenate([self.payload, byte_to_bits(self.crc)]))

    @property
    def n_bits(self) -> int:
        return len(self.payload) + 8

    def chips(self) -> ChipSequence:
        """Preamble followed by the Manchester-coded payload and CRC."""
        body = manchester_encode(self.bits, self.chip_period_us).chips
        return ChipSequence(np.concatenate([self.preamble.chips, body]), self.chip_period_us)

    def crc_ok(self) -> bool:
        return crc8(bits_to_bytes(self.payload)) == self.crc


# -- Manchester ----------------------------------------------------------------

def manchester_encode(bits, chip_period_us: float = DEFAULT_CHIP_PERIOD_US) -> ChipSequence:
    b = as_bits(bits)
    chips = np.empty(2 * len(b), dtype=np.uint8)
    chips[0::2] = 1 - b
    chips[1::2] = b
    return ChipSequence(chips, chip_period_us)


def manchester_decode(chips: ChipSequence | Sequence[int]) -> np.ndarray:
    c = chips.chips if isinstance(chips, ChipSequence) else as_bits(chips)
    if len(c) % 2:
        raise OddLength(f"chip count {len(c)} is odd")
    first, second = c[0::2], c[1::2]
    bad = np.flatnonzero(first == second)
    if bad.size:
        raise InvalidChipPair(int(bad[0]))
    return as_bits(second)


# -- CRC8 ----------------------------------------------------------------------

def _crc8_table(poly: int) -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
        table.append(crc)
    return tuple(table)


_CRC8_TABLE = _crc8_table(CRC8_POLY)


def crc8(data: bytes | Iterable[int]) -> int:
    """CRC-8 with polynomial x^8 + x^2 + x + 1, init 0, no reflection, no final XOR."""
    crc = 0
    for byte in bytes(data):
        crc = _CRC8_TABLE[crc ^ byte]
    return crc


def byte_to_bits(value: int) -> np.ndarray:
    return np.array([(value >> (7 - i)) & 1 for i in range(8)], dtype=np.uint8)


def bytes_to_bits(data: bytes | Iterable[int]) -> np.ndarray:
    return as_bits(np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8)))


def bits_to_bytes(bits) -> bytes:
    b = as_bits(bits)
    if len(b) % 8:
        raise PayloadNotByteAligned(f"{len(b)} bits is not a whole number of bytes")
    return np.packbits(b).tobytes()


# -- downlink clock-period coding ----------------------------------------------

def clock_period_encode(bits) -> np.ndarray:
    """Map each bit pair to a comparator period: 00->185, 01->195, 10->205, 11->215 us."""
    b = as_bits(bits)
    if len(b) % 2:
        raise OddBitCount(f"{len(b)} bits cannot be grouped in pairs")
    symbols = 2 * b[0::2] + b[1::2]
    return np.asarray(PERIOD_SYMBOLS_US)[symbols.astype(int)]


def clock_period_decode(periods, tolerance_us: float = 4.0) -> np.ndarray:
    if not 0 < tolerance_us < 5:
        raise ValueError("tolerance_us must lie in (0, 5)")
    p = np.asarray(periods, dtype=np.float64).reshape(-1)
    if p.size == 0:
        return as_bits([])
    nominal = np.asarray(PERIOD_SYMBOLS_US)
    dist = np.abs(p[:, None] - nominal[None, :])
    symbol = dist.argmin(axis=1)
    miss = np.flatnonzero(dist[np.arange(len(p)), symbol] > tolerance_us)
    if miss.size:
        i = int(miss[0])
        raise UnclassifiablePeriod(i, float(p[i]))
    out = np.empty(2 * len(p), dtype=np.uint8)
    out[0::2] = symbol >> 1
    out[1::2] = symbol & 1
    return as_bits(out)


# -- framing ---------------------------------------------------------------------

def build_frame(payload, chip_period_us: float = DEFAULT_CHIP_PERIOD_US) -> Frame:
    b = as_bits(payload)
    crc = crc8(bits_to_bytes(b))
    return Frame(ChipSequence(np.array(PREAMBLE_CHIPS), chip_period_us), b, crc)


def frame_from_bytes(data: bytes, chip_period_us: float = DEFAULT_CHIP_PERIOD_US) -> Frame:
    return build_frame(bytes_to_bits(data), chip_period_us)


def line_chips(frame: Frame, lead_chips: int = LEAD_CHIPS) -> np.ndarray:
    """Chips actually driven onto the LCD: idle lead-in, frame, one idle flush bit, idle guard."""
    return np.concatenate([
        np.full(lead_chips, IDLE_CHIP, dtype=np.uint8),
        frame.chips().chips,
        np.full(FLUSH_CHIPS + GUARD_CHIPS, IDLE_CHIP, dtype=np.uint8),
    ])


def chip_boundaries_us(n_chips: int, chip_period_us: float, start_us: float = 0.0) -> np.ndarray:
    return start_us + chip_period_us * np.arange(n_chips + 1, dtype=np.float64)


def synthesize_chips(chips, boundaries_us, shaping: LcdShapingParams,
                     sample_rate_hz: float, n_samples: int | None = None) -> BasebandWaveform:
    """Render chip levels through the LCD's RC response at arbitrary chip boundaries.

    The shutter starts settled at the level of the first chip.  Samples before
    the first boundary hold that level, samples after the last one continue
    relaxing toward the final chip's rail.
    """
    c = as_bits(chips)
    b = np.asarray(boundaries_us, dtype=np.float64)
    if len(b) != len(c) + 1:
        raise ValueError("need exactly one more boundary than chips")
    if np.any(np.diff(b) <= 0):
        raise ValueError("chip boundaries must be strictly increasing")
    if n_samples is None:
        n_samples = int(np.floor(b[-1] * sample_rate_hz / 1e6))
    target = np.where(c == 1, shaping.v_high, shaping.v_low)
    tau = np.where(c == 1, shaping.tau_charge_us, shaping.tau_discharge_us)
    decay = np.exp(-np.diff(b) / tau)

    start = np.empty(len(c) + 1)
    start[0] = target[0] if len(c) else shaping.v_low
    for j in range(len(c)):
        start[j + 1] = target[j] + (start[j] - target[j]) * decay[j]

    t = (np.arange(n_samples) + 0.5) * 1e6 / sample_rate_hz
    if len(c) == 0:
        return BasebandWaveform(np.full(n_samples, shaping.v_low), sample_rate_hz)
    j = np.clip(np.searchsorted(b, t, side="right") - 1, 0, len(c) - 1)
    elapsed = np.maximum(t - b[j], 0.0)
    v = target[j] + (start[j] - target[j]) * np.exp(-elapsed / tau[j])
    return BasebandWaveform(v, sample_rate_hz)


def rectangular_chips(chips, boundaries_us, shaping: LcdShapingParams,
                      sample_rate_hz: float, n_samples: int | None = None) -> BasebandWaveform:
    """Ideal chip waveform (the zero-time-constant limit of synthesize_chips)."""
    c = as_bits(chips)
    b = np.asarray(boundaries_us, dtype=np.float64)
    if n_samples is None:
        n_samples = int(np.floor(b[-1] * sample_rate_hz / 1e6))
    t = (np.arange(n_samples) + 0.5) * 1e6 / sample_rate_hz
    j = np.clip(np.searchsorted(b, t, side="right") - 1, 0, len(c) - 1)
    return BasebandWaveform(np.where(c[j] == 1, shaping.v_high, shaping.v_low), sample_rate_hz)


def synthesize_uplink_waveform(frame: Frame, shaping: LcdShapingParams | None = None,
                               sample_rate_hz: float = DEFAULT_SAMPLE_RATE_HZ, *,
                               boundaries_us=None, lead_chips: int = LEAD_CHIPS) -> BasebandWaveform:
    """Render a frame as the reader's post-envelope baseband.

    ``boundaries_us`` overrides the nominal chip grid, e.g. with the output of
    :func:`retrovlc.channel.apply_tag_clock`.
    """
    shaping = shaping or LcdShapingParams()
    if sample_rate_hz < 10 * frame.preamble.chip_rate_hz:
        raise SampleRateTooLow(
            f"{sample_rate_hz} Hz is below 10x the chip rate {frame.preamble.chip_rate_hz} Hz")
    chips = line_chips(frame, lead_chips)
    if boundaries_us is None:
        boundaries_us = chip_boundaries_us(len(chips), frame.chip_period_us)
    return synthesize_chips(chips, boundaries_us, shaping, sample_rate_hz)


def bit_centers_us(boundaries_us, n_bits: int, lead_chips: int = LEAD_CHIPS) -> np.ndarray:
    """Times of the mid-bit transitions of each payload/CRC bit."""
    b = np.asarray(boundaries_us)
    first = lead_chips + len(PREAMBLE_CHIPS) + 1
    return b[first:first + 2 * n_bits:2]


def preamble_start_us(boundaries_us, lead_chips: int = LEAD_CHIPS) -> float:
    return float(np.asarray(boundaries_us)[lead_chips])
