"""Reader-side uplink decoding.

The main decoder slides a three-bit window along the frame, matches it against
all eight three-bit templates and keeps the middle bit.  The window position
comes from a running estimate of the tag/reader clock ratio, refreshed after
every window from the matched lag.  Three simpler decoders are kept for
comparison.

Times are in microseconds on the reader clock; chip boundaries follow the
sample-edge convention of :mod:`retrovlc.signal`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import FrameTruncated, NoPreamble, PreambleMissing, SampleRateTooLow
from .signal import (
    DEFAULT_CHIP_PERIOD_US,
    FLUSH_CHIPS,
    GUARD_CHIPS,
    LEAD_CHIPS,
    PREAMBLE_CHIPS,
    BasebandWaveform,
    as_bits,
    bits_to_bytes,
    crc8,
    manchester_encode,
)

MIN_SAMPLES_PER_CHIP = 16
N_PREAMBLE = len(PREAMBLE_CHIPS)


@dataclass(frozen=True)
class ClockHint:
    chip_period_us: float = DEFAULT_CHIP_PERIOD_US
    k_prior: float = 1.0

    def __post_init__(self):
        if self.chip_period_us <= 0:
            raise ValueError("chip_period_us must be positive")
        if not 0.9 <= self.k_prior <= 1.1:
            raise ValueError("k_prior must lie in [0.9, 1.1]")


@dataclass(frozen=True)
class DecoderConfig:
    preamble_threshold: float = 0.6
    min_corr: float = 0.3          # windows below this do not update the clock estimate
    k_bounds: tuple[float, float] = (0.9, 1.1)
    search_chips: float = 0.5      # lag search half-width
    lag_step_samples: float = 1.0
    least_squares: bool = False    # regress over all past windows instead of two points


@dataclass(frozen=True)
class TemplateBank:
    """All eight three-bit patterns and their +/-1 matched templates."""

    patterns: np.ndarray        # (8, 3) bits
    chip_signs: np.ndarray      # (8, 6) zero-mean chip weights
    templates: np.ndarray       # (8, 6 * samples_per_chip)
    samples_per_chip: int

    @classmethod
    def build(cls, chip_period_us: float = DEFAULT_CHIP_PERIOD_US,
              sample_rate_hz: float = 20_000.0) -> "TemplateBank":
        spc = int(round(chip_period_us * sample_rate_hz / 1e6))
        patterns = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.uint8)
        signs = np.array([2.0 * manchester_encode(p).chips - 1.0 for p in patterns])
        signs -= signs.mean(axis=1, keepdims=True)
        templates = np.repeat(signs, spc, axis=1)
        for a in (patterns, signs, templates):
            a.flags.writeable = False
        return cls(patterns, signs, templates, spc)

    def __len__(self) -> int:
        return len(self.patterns)

    def best_match(self, window: np.ndarray) -> int:
        """Index of the template with the highest normalized correlation."""
        w = np.asarray(window, dtype=float)
        if len(w) != self.templates.shape[1]:
            raise ValueError("window length must equal the template length")
        w = w - w.mean()
        return int(np.argmax(self.templates @ w / np.linalg.norm(self.templates, axis=1)))


@dataclass
class TimeRecoveryState:
    s0_hat: float
    k_hat: float = 1.0
    s_i: float = 0.0
    t_i: float = 0.0


@dataclass
class DecodeResult:
    payload: np.ndarray
    crc_ok: bool
    per_bit_timing_error_us: np.ndarray
    iterations: int
    bits: np.ndarray = field(repr=False)
    k_hat: float = 1.0
    window_corr: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def bit_errors(self, truth) -> int:
        t = as_bits(truth)
        n = min(len(t), len(self.bits))
        return int(np.count_nonzero(t[:n] != self.bits[:n]) + abs(len(t) - len(self.bits)))


class PreambleHit(tuple):
    """``(index, quality)`` with the fractional start time attached."""

    start_us: float

    def __new__(cls, index: int, quality: float, start_us: float):
        obj = super().__new__(cls, (index, quality))
        obj.start_us = start_us
        return obj

    @property
    def index(self) -> int:
        return self[0]

    @property
    def quality(self) -> float:
        return self[1]


# -- helpers ---------------------------------------------------------------------

def _hold_integral(cs: np.ndarray, x: np.ndarray, c) -> np.ndarray:
    c = np.clip(np.asarray(c, dtype=float), 0.0, len(x))
    i = np.minimum(np.floor(c).astype(int), len(x) - 1)
    return cs[i] + (c - i) * x[i]


def _check_rate(wave: BasebandWaveform, chip_period_us: float) -> float:
    spc = chip_period_us * wave.sample_rate_hz / 1e6
    if spc < MIN_SAMPLES_PER_CHIP - 1e-9:
        raise SampleRateTooLow(
            f"{spc:.1f} samples per chip; decoding needs at least {MIN_SAMPLES_PER_CHIP}")
    return spc


def _finish(bits: np.ndarray, n_payload: int, centers_us, truth_centers_us,
            iterations: int, k_hat: float = 1.0, corr=None) -> DecodeResult:
    bits = as_bits(bits)
    payload = as_bits(bits[:n_payload])
    crc_bits = bits[n_payload:n_payload + 8]
    crc_ok = False
    if n_payload % 8 == 0 and len(crc_bits) == 8:
        crc_ok = crc8(bits_to_bytes(payload)) == int(np.packbits(crc_bits)[0])
    if truth_centers_us is None:
        err = np.zeros(0)
    else:
        truth = np.asarray(truth_centers_us, dtype=float)
        c = np.asarray(centers_us, dtype=float)
        err = np.full(len(truth), np.nan)
        m = min(len(truth), len(c))
        err[:m] = c[:m] - truth[:m]
    return DecodeResult(payload, crc_ok, err, iterations, bits, k_hat,
                        np.zeros(0) if corr is None else np.asarray(corr))


def _n_payload_from_length(wave: BasebandWaveform, s0_us: float, chip_us: float) -> int:
    """Infer the payload length assuming the capture ends with the idle flush and guard."""
    body = wave.duration_us - s0_us - (N_PREAMBLE + FLUSH_CHIPS + GUARD_CHIPS) * chip_us
    n_bits = int(round(body / (2 * chip_us)))
    if n_bits <= 8:
        raise FrameTruncated("capture too short to hold a payload and CRC")
    return n_bits - 8


# -- preamble ------------------------------------------------------------------

def preamble_correlation(wave: BasebandWaveform, chip_period_us: float = DEFAULT_CHIP_PERIOD_US,
                         k: float = 1.0, smooth_chips: float = 0.0) -> np.ndarray:
    """Pearson correlation of every sample offset with the idle lead-in plus the preamble.

    Entry ``p`` scores a template whose lead-in starts at sample edge ``p``.
    With ``smooth_chips`` > 0 the input is first smoothed by a centred boxcar
    of about that width, which sharpens localization but correlates the noise.
    """
    lc = k * chip_period_us * wave.sample_rate_hz / 1e6
    x = wave.samples
    m = 2 * int(smooth_chips * lc / 2) + 1
    if m > 1:
        x = np.convolve(x, np.ones(m) / m, mode="same")
    return _kernels.preamble_corr(np.ascontiguousarray(x), lc, LEAD_CHIPS, N_PREAMBLE)


def locate_preamble(wave: BasebandWaveform, clock_hint: ClockHint | None = None,
                    threshold: float = 0.6, smooth_chips: float = 0.5) -> PreambleHit:
    """Detect on the raw correlation, then localize on a smoothed one near the peak."""
    hint = clock_hint or ClockHint()
    rho = preamble_correlation(wave, hint.chip_period_us, hint.k_prior)
    if rho.size == 0:
        raise NoPreamble(0.0, threshold)
    p = int(np.argmax(rho))
    quality = float(rho[p])
    if quality < threshold:
        raise NoPreamble(quality, threshold)
    lc = hint.k_prior * hint.chip_period_us * wave.sample_rate_hz / 1e6
    if smooth_chips > 0:
        smooth = preamble_correlation(wave, hint.chip_period_us, hint.k_prior, smooth_chips)
        lo, hi = max(p - int(lc / 2), 0), min(p + int(lc / 2) + 1, len(smooth))
        rho, p = smooth, lo + int(np.argmax(smooth[lo:hi]))
    frac = 0.0
    if 0 < p < len(rho) - 1:
        a, b, c = rho[p - 1], rho[p], rho[p + 1]
        den = a - 2 * b + c
        if den < 0:
            frac = 0.5 * (a - c) / den
    start = p + frac + LEAD_CHIPS * lc
    return PreambleHit(int(round(start)), quality, start * 1e6 / wave.sample_rate_hz)


def detect_preamble(wave: BasebandWaveform, clock_hint: ClockHint | None = None,
                    threshold: float = 0.6) -> tuple[int, float]:
    """Sample index where the preamble starts and its normalized correlation."""
    hit = locate_preamble(wave, clock_hint, threshold)
    return hit.index, hit.quality


def _start(wave, hint, config, s0_us):
    if s0_us is not None:
        return float(s0_us)
    try:
        return locate_preamble(wave, hint, config.preamble_threshold).start_us
    except NoPreamble as e:
        raise PreambleMissing(e.quality, e.threshold) from None


# -- sliding-window multi-symbol match filter ---------------------------------

def decode_swmsmf(wave: BasebandWaveform, bank: TemplateBank | None = None,
                  clock_hint: ClockHint | None = None, n_payload_bits: int | None = None, *,
                  config: DecoderConfig = DecoderConfig(), truth_centers_us=None,
                  s0_us: float | None = None) -> DecodeResult:
    """Decode one uplink frame.

    ``n_payload_bits`` defaults to what fits between the preamble and the end
    of the capture.  ``s0_us`` overrides the detected preamble start.
    """
    hint = clock_hint or ClockHint()
    _check_rate(wave, hint.chip_period_us)
    if bank is not None and bank.chip_signs.shape != (8, 6):
        raise ValueError("template bank must hold eight three-bit templates")
    s0 = _start(wave, hint, config, s0_us)
    if n_payload_bits is None:
        n_payload_bits = _n_payload_from_length(wave, s0, hint.chip_period_us * hint.k_prior)
    n_bits = n_payload_bits + 8
    fs_per_us = wave.sample_rate_hz / 1e6
    status, bits, pred, _, corr, ktrace = _kernels.swmsmf(
        np.ascontiguousarray(wave.samples), fs_per_us, s0, float(hint.chip_period_us),
        float(hint.k_prior), n_bits, config.lag_step_samples / fs_per_us,
        config.search_chips * hint.chip_period_us, config.min_corr,
        config.k_bounds[0], config.k_bounds[1], config.least_squares)
    if status == _kernels.TRUNCATED:
        raise FrameTruncated("decode window runs past the end of the capture")
    return _finish(bits, n_payload_bits, pred, truth_centers_us, n_bits,
                   float(ktrace[-1]), corr)


def decode_many(waves, bank: TemplateBank | None = None, clock_hint: ClockHint | None = None,
                n_payload_bits=None, **kw) -> list[DecodeResult]:
    """Decode independent frames; ``n_payload_bits`` may be a scalar or per-frame list."""
    if n_payload_bits is None or np.isscalar(n_payload_bits):
        n_payload_bits = [n_payload_bits] * len(waves)
    return [decode_swmsmf(w, bank, clock_hint, n, **kw) for w, n in zip(waves, n_payload_bits)]


def timing_recovery_trace(result: DecodeResult) -> np.ndarray:
    """Per-window normalized correlation of the winning template."""
    return result.window_corr


# -- baselines -----------------------------------------------------------------

def _nominal_setup(wave, clock_hint, n_payload_bits, config, s0_us):
    hint = clock_hint or ClockHint()
    _check_rate(wave, hint.chip_period_us)
    s0 = _start(wave, hint, config, s0_us)
    chip = hint.chip_period_us * hint.k_prior
    if n_payload_bits is None:
        n_payload_bits = _n_payload_from_length(wave, s0, chip)
    return s0, chip, n_payload_bits


def _sample_at(wave: BasebandWaveform, t_us) -> np.ndarray:
    idx = np.floor(np.asarray(t_us) * wave.sample_rate_hz / 1e6).astype(int)
    if np.any(idx >= len(wave)) or np.any(idx < 0):
        raise FrameTruncated("decode position runs past the end of the capture")
    return wave.samples[idx]


def _chips_to_bits(chips: np.ndarray) -> np.ndarray:
    """Manchester decode that keeps going on invalid pairs (second chip wins)."""
    return chips[1::2].astype(np.uint8)


def decode_baseline_average(wave: BasebandWaveform, clock_hint: ClockHint | None = None,
                            n_payload_bits: int | None = None, *, window_chips: int | None = None,
                            config: DecoderConfig = DecoderConfig(), truth_centers_us=None,
                            s0_us: float | None = None) -> DecodeResult:
    """Slice chip centres against a running-mean threshold on the nominal clock.

    By default the threshold is the mean of every sample received so far;
    ``window_chips`` switches to a centred moving average of that width.
    """
    s0, chip, n_payload = _nominal_setup(wave, clock_hint, n_payload_bits, config, s0_us)
    n_bits = n_payload + 8
    centres = s0 + (N_PREAMBLE + np.arange(2 * n_bits) + 0.5) * chip
    v = _sample_at(wave, centres)
    idx = np.floor(centres * wave.sample_rate_hz / 1e6).astype(int)
    cs = np.concatenate([[0.0], np.cumsum(wave.samples)])
    if window_chips is None:
        thr = cs[idx + 1] / (idx + 1)
    else:
        half = max(int(window_chips * chip * wave.sample_rate_hz / 2e6), 1)
        lo = np.clip(idx - half, 0, len(wave))
        hi = np.clip(idx + half, 0, len(wave))
        thr = (cs[hi] - cs[lo]) / np.maximum(hi - lo, 1)
    chips = (v > thr).astype(np.uint8)
    bit_centres = s0 + (N_PREAMBLE + 1 + 2 * np.arange(n_bits)) * chip
    return _finish(_chips_to_bits(chips), n_payload, bit_centres, truth_centers_us, n_bits)


def _turning_points(y: np.ndarray, hysteresis: float):
    """Alternating extrema (index, is_peak) that move at least ``hysteresis``."""
    out = []
    ext_i, ext_v = 0, y[0]
    looking_peak = None
    for i in range(1, len(y)):
        v = y[i]
        if looking_peak is None:
            if v >= ext_v + hysteresis:
                looking_peak = True
                ext_i, ext_v = i, v
            elif v <= ext_v - hysteresis:
                looking_peak = False
                ext_i, ext_v = i, v
            continue
        if looking_peak:
            if v > ext_v:
                ext_i, ext_v = i, v
            elif v <= ext_v - hysteresis:
                out.append((ext_i, True))
                looking_peak = False
                ext_i, ext_v = i, v
        else:
            if v < ext_v:
                ext_i, ext_v = i, v
            elif v >= ext_v + hysteresis:
                out.append((ext_i, False))
                looking_peak = True
                ext_i, ext_v = i, v
    return out


def decode_baseline_edge(wave: BasebandWaveform, clock_hint: ClockHint | None = None,
                         n_payload_bits: int | None = None, *, hysteresis_frac: float = 0.4,
                         diff_chips: float = 0.25, config: DecoderConfig = DecoderConfig(),
                         truth_centers_us=None, s0_us: float | None = None) -> DecodeResult:
    """Clock beats from the extreme points of the differentiated signal.

    The signal is smoothed and differenced over ``diff_chips``.  Derivative
    peaks mark rising edges and troughs falling edges; the gap
    between successive edges is rounded to whole chips.  Extrema smaller than
    ``hysteresis_frac`` of the strongest edge are ignored.
    """
    s0, chip, n_payload = _nominal_setup(wave, clock_hint, n_payload_bits, config, s0_us)
    n_bits = n_payload + 8
    fs_per_us = wave.sample_rate_hz / 1e6
    h = max(int(round(diff_chips * chip * fs_per_us)), 1)
    x = np.convolve(wave.samples, np.ones(h) / h, mode="same")
    d = np.zeros_like(x)
    d[h:-h] = x[2 * h:] - x[:-2 * h]
    i0 = max(int((s0 - 0.5 * chip) * fs_per_us), 0)
    d = d[i0:]
    tps = _turning_points(d, hysteresis_frac * np.abs(d).max()) if d.size else []

    chips: list[int] = []
    edges_us: list[float] = []
    prev_t = None
    for i, is_rise in tps:
        if abs(d[i]) < hysteresis_frac * np.abs(d).max():
            continue
        t = (i0 + i + 0.5) / fs_per_us
        if prev_t is None:
            if not is_rise:
                continue
        else:
            run = max(int(round((t - prev_t) / chip)), 1)
            chips.extend([0 if is_rise else 1] * run)
        edges_us.append(t)
        prev_t = t
        if len(chips) >= N_PREAMBLE + 2 * n_bits:
            break
    body = np.zeros(2 * n_bits, dtype=np.uint8)
    chips = chips[N_PREAMBLE:]
    m = min(len(chips), len(body))
    body[:m] = chips[:m]
    # timing: the detected edge nearest each nominal mid-bit instant
    nominal = s0 + (N_PREAMBLE + 1 + 2 * np.arange(n_bits)) * chip
    e = np.asarray(edges_us) if edges_us else np.array([np.inf])
    centres = e[np.abs(e[None, :] - nominal[:, None]).argmin(axis=1)]
    return _finish(_chips_to_bits(body), n_payload, centres, truth_centers_us, n_bits)


def decode_baseline_single_symbol(wave: BasebandWaveform, clock_hint: ClockHint | None = None,
                                  n_payload_bits: int | None = None, *,
                                  config: DecoderConfig = DecoderConfig(), truth_centers_us=None,
                                  s0_us: float | None = None) -> DecodeResult:
    """One-bit matched filter; each bit re-anchors on its own correlation peak."""
    s0, chip, n_payload = _nominal_setup(wave, clock_hint, n_payload_bits, config, s0_us)
    n_bits = n_payload + 8
    x = wave.samples
    fs_per_us = wave.sample_rate_hz / 1e6
    cs = np.concatenate([[0.0], np.cumsum(x)])
    lc = chip * fs_per_us
    lags = np.arange(-config.search_chips * lc, config.search_chips * lc + 1e-9,
                     config.lag_step_samples)
    bits = np.zeros(n_bits, dtype=np.uint8)
    centres = np.zeros(n_bits)
    expect = s0 + (N_PREAMBLE + 1) * chip
    for j in range(n_bits):
        c = expect * fs_per_us + lags
        if c[-1] + lc > len(x) or c[0] - lc < 0:
            raise FrameTruncated("decode window runs past the end of the capture")
        first = _hold_integral(cs, x, c) - _hold_integral(cs, x, c - lc)
        second = _hold_integral(cs, x, c + lc) - _hold_integral(cs, x, c)
        corr = (second - first) / lc
        best = int(np.argmax(np.abs(corr)))
        bits[j] = corr[best] > 0
        centres[j] = c[best] / fs_per_us
        expect = centres[j] + 2 * chip
    return _finish(bits, n_payload, centres, truth_centers_us, n_bits)


# -- convergence of the two-point clock estimate ---------------------------------

def lemma1_error_trace(packet_bits: int, k_true: float, t0_error: float,
                       bit_period_us: float = 2 * DEFAULT_CHIP_PERIOD_US,
                       t0: float = 0.0) -> np.ndarray:
    """Boundary-prediction errors of the two-point clock estimate on noiseless timing.

    Window i sits at reader time s[i] = (i + 2) bit periods after the preamble
    start and the true tag time is t[i] = t0 + k*s[i].  Starting from a wrong
    anchor t0 + t0_error, the line through the anchor and (s[i], t[i]) predicts
    the next boundary; entry i is that prediction minus t[i + 1].
    """
    if packet_bits < 1:
        return np.zeros(0)
    s = (np.arange(packet_bits + 1) + 2.0) * bit_period_us
    t = t0 + k_true * s
    t0_hat = t0 + t0_error
    err = np.empty(packet_bits)
    for i in range(packet_bits):
        slope = (t[i] - t0_hat) / s[i]
        err[i] = t0_hat + slope * s[i + 1] - t[i + 1]
    return err
