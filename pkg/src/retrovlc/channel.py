"""Parametric uplink channel: path loss, distortions, and the tag's RC clock."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ClockNotMonotone
from .signal import BasebandWaveform

# Reflector third of an 8.2 x 5.2 cm card.
REF_REFLECTOR_AREA_CM2 = 8.2 * 5.2 / 3.0


@dataclass(frozen=True)
class ChannelConfig:
    path_loss_exponent: float = 2.5
    ref_distance_m: float = 1.5
    ref_rx_power_dbm: float = -80.0
    tx_power_dbm: float = 30.0
    awgn_sigma: float = 0.0
    # (frequency Hz, amplitude) interferers: AC-supply harmonics and a folded radio tone.
    ac_harmonic_amps: tuple[tuple[float, float], ...] = ((100.0, 0.0), (120.0, 0.0), (3000.0, 0.0))
    drift_amplitude: float = 0.0
    drift_freq_hz: float = 5.0
    clip_high: float | None = None
    clip_low: float | None = None
    clock_ratio_k: float = 1.0
    clock_offset_us: float = 0.0
    clock_drift_rate: float = 0.0  # change of the clock ratio per second
    angle_breakpoint_deg: float = 20.0
    angle_rolloff_db_per_deg: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 2.0 <= self.path_loss_exponent <= 4.0:
            raise ValueError("path_loss_exponent must lie in [2, 4]")
        if self.ref_distance_m <= 0:
            raise ValueError("ref_distance_m must be positive")
        if not 0.9 <= self.clock_ratio_k <= 1.1:
            raise ValueError("clock_ratio_k must lie in [0.9, 1.1]")
        if self.awgn_sigma < 0:
            raise ValueError("awgn_sigma must be non-negative")
        if self.angle_rolloff_db_per_deg < 0:
            raise ValueError("angle roll-off must be non-negative")
        if (self.clip_high is not None and self.clip_low is not None
                and self.clip_high <= self.clip_low):
            raise ValueError("clip_high must exceed clip_low")
        object.__setattr__(self, "ac_harmonic_amps",
                           tuple((float(f), float(a)) for f, a in self.ac_harmonic_amps))

    def with_(self, **changes) -> "ChannelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class GeometryConfig:
    distance_m: float = 1.5
    incidence_angle_deg: float = 0.0  # equals the irradiation angle in the test setup
    reflector_area_cm2: float = REF_REFLECTOR_AREA_CM2
    dispersion_halfangle_deg: float = 5.0
    # Sniffer-side parameters, calibrated to a narrow detectable lobe behind the reader.
    sniffer_rolloff_db_per_deg: float = 3.0
    sniffer_path_loss_exponent: float = 4.7

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError("distance_m must be positive")
        if not 0 <= self.incidence_angle_deg < 90:
            raise ValueError("incidence_angle_deg must lie in [0, 90)")
        if self.reflector_area_cm2 <= 0:
            raise ValueError("reflector_area_cm2 must be positive")

    def with_(self, **changes) -> "GeometryConfig":
        return replace(self, **changes)


def angle_penalty_db(angle_deg: float, cfg: ChannelConfig) -> float:
    """Zero inside the breakpoint, then linear in dB."""
    excess = abs(angle_deg) - cfg.angle_breakpoint_deg
    return -cfg.angle_rolloff_db_per_deg * max(excess, 0.0)


def received_power_dbm(cfg: ChannelConfig, geo: GeometryConfig) -> float:
    return (cfg.ref_rx_power_dbm
            - 10.0 * cfg.path_loss_exponent * np.log10(geo.distance_m / cfg.ref_distance_m)
            + 10.0 * np.log10(geo.reflector_area_cm2 / REF_REFLECTOR_AREA_CM2)
            + angle_penalty_db(geo.incidence_angle_deg, cfg))


def amplitude_scale(cfg: ChannelConfig, geo: GeometryConfig) -> float:
    """Baseband amplitude relative to the calibration point."""
    return float(10.0 ** ((received_power_dbm(cfg, geo) - cfg.ref_rx_power_dbm) / 20.0))


def clip(x: np.ndarray, low: float | None, high: float | None) -> np.ndarray:
    if low is None and high is None:
        return x
    return np.clip(x, -np.inf if low is None else low, np.inf if high is None else high)


def apply_channel(wave: BasebandWaveform, cfg: ChannelConfig,
                  geo: GeometryConfig | None = None) -> BasebandWaveform:
    """clip(scale * wave + noise + interferers + slow drift), deterministic in cfg.seed."""
    geo = geo or GeometryConfig(distance_m=cfg.ref_distance_m)
    rng = np.random.default_rng(cfg.seed)
    t = wave.times_us() * 1e-6
    y = amplitude_scale(cfg, geo) * wave.samples
    if cfg.awgn_sigma > 0:
        y = y + rng.normal(0.0, cfg.awgn_sigma, len(y))
    for freq, amp in cfg.ac_harmonic_amps:
        if amp:
            y = y + amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    if cfg.drift_amplitude:
        y = y + cfg.drift_amplitude * np.sin(2 * np.pi * cfg.drift_freq_hz * t)
    return BasebandWaveform(clip(y, cfg.clip_low, cfg.clip_high), wave.sample_rate_hz)


def snr_sigma(wave: BasebandWaveform, snr_db: float) -> float:
    """Noise sigma giving ``snr_db`` against the waveform's AC power."""
    return float(np.sqrt(np.var(wave.samples) / 10 ** (snr_db / 10)))


# -- tag clock ---------------------------------------------------------------------

def max_drift_rate(cfg: ChannelConfig, span_us: float) -> float:
    """Largest negative drift magnitude keeping the clock map increasing over span_us."""
    return cfg.clock_ratio_k / (span_us * 1e-6)


def apply_tag_clock(boundaries_us, cfg: ChannelConfig) -> np.ndarray:
    """Map nominal tag-clock boundaries onto the reader's time axis.

    The instantaneous ratio is k(T) = k0 + drift_rate * T; elapsed reader time is
    its integral, offset + k0*T + drift_rate*T^2/2.
    """
    T = np.asarray(boundaries_us, dtype=np.float64)
    r = cfg.clock_drift_rate * 1e-6  # per microsecond
    if T.size and cfg.clock_ratio_k + r * T.max() <= 0:
        raise ClockNotMonotone(
            f"drift rate {cfg.clock_drift_rate}/s reverses the clock within {T.max()} us")
    return cfg.clock_offset_us + cfg.clock_ratio_k * T + 0.5 * r * T * T


# -- eavesdropping ---------------------------------------------------------------

def eavesdrop_power_dbm(cfg: ChannelConfig, geo: GeometryConfig,
                        sniffer_angle_deg: float, sniffer_distance_m: float) -> float:
    """Uplink power at an off-axis observer ``sniffer_distance_m`` from the tag.

    Referenced to the legitimate reader at ``geo.distance_m``: the return beam
    keeps its power inside the dispersion half-angle and falls steeply outside,
    and spreads with the sniffer's own path-loss exponent.
    """
    main = received_power_dbm(cfg, geo)
    spread = 10.0 * geo.sniffer_path_loss_exponent * np.log10(sniffer_distance_m / geo.distance_m)
    outside = max(abs(sniffer_angle_deg) - geo.dispersion_halfangle_deg, 0.0)
    return float(main - spread - geo.sniffer_rolloff_db_per_deg * outside)


def sniffer_detects(cfg: ChannelConfig, geo: GeometryConfig, sniffer_angle_deg: float,
                    sniffer_distance_m: float, sensitivity_dbm: float = -100.0,
                    gain_db: float = 0.0) -> bool:
    """``gain_db`` is extra sniffer gain beyond the reference receiver."""
    p = eavesdrop_power_dbm(cfg, geo, sniffer_angle_deg, sniffer_distance_m)
    return p + gain_db >= sensitivity_dbm


@dataclass
class EavesdropMap:
    angles_deg: np.ndarray
    distances_m: np.ndarray
    detectable: np.ndarray = field(repr=False)

    @property
    def max_angle_deg(self) -> float:
        a = np.abs(self.angles_deg)[self.detectable.any(axis=1)]
        return float(a.max()) if a.size else 0.0

    @property
    def max_distance_m(self) -> float:
        d = self.distances_m[self.detectable.any(axis=0)]
        return float(d.max()) if d.size else 0.0

    def area_m2(self) -> float:
        """Detectable area in the polar grid (sector cells, angle cells in degrees)."""
        da = np.deg2rad(np.abs(np.diff(self.angles_deg)).mean()) if len(self.angles_deg) > 1 else 0.0
        dr = np.diff(self.distances_m).mean() if len(self.distances_m) > 1 else 0.0
        cell = self.distances_m[None, :] * da * dr
        return float((cell * self.detectable).sum())


def eavesdrop_map(cfg: ChannelConfig, geo: GeometryConfig, angles_deg, distances_m,
                  sensitivity_dbm: float = -100.0, gain_db: float = 0.0) -> EavesdropMap:
    angles = np.asarray(angles_deg, dtype=float)
    dists = np.asarray(distances_m, dtype=float)
    det = np.array([[sniffer_detects(cfg, geo, a, d, sensitivity_dbm, gain_db) for d in dists]
                    for a in angles])
    return EavesdropMap(angles, dists, det)
