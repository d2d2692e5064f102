"""Desk-scale versions of the evaluation experiments.

Every experiment maps (scenario, seed) to a list of CSV rows.  Rows carry the
seed in their first column so that concurrent runs can be merged in a fixed
order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import decoder as dec
from .channel import (
    ChannelConfig,
    GeometryConfig,
    apply_channel,
    eavesdrop_map,
    eavesdrop_power_dbm,
    received_power_dbm,
    snr_sigma,
)
from .errors import RetroVLCError
from .fixtures import CASES, make_fixture
from .mac import (
    BackoffConfig,
    Node,
    PollSchedule,
    Traffic,
    run_polling_round,
    run_reader_contention,
    slot_length_us,
)
from .scenario import Scenario
from .signal import LcdShapingParams, build_frame, synthesize_uplink_waveform
from .tag import EnergyLedger, HarvestModel, calibrate_harvest, phase_power_uw

CSV_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Experiment:
    columns: tuple[str, ...]
    run: Callable[[Scenario, int], list[tuple]]
    summarize: Callable[[Scenario, list[tuple]], dict] | None = None


# -- shared model construction ---------------------------------------------------

def channel_config(sc: Scenario, seed: int = 0, **over) -> ChannelConfig:
    c = sc["channel"]
    kw = dict(path_loss_exponent=c["path_loss_exponent"], ref_distance_m=c["ref_distance_m"],
              ref_rx_power_dbm=c["ref_rx_power_dbm"], angle_breakpoint_deg=c["angle_breakpoint_deg"],
              angle_rolloff_db_per_deg=c["angle_rolloff_db_per_deg"],
              clock_ratio_k=c["clock_ratio_k"], seed=seed)
    kw.update(over)
    return ChannelConfig(**kw)


def geometry_config(sc: Scenario, **over) -> GeometryConfig:
    g = sc["geometry"]
    kw = {k: g[k] for k in ("distance_m", "incidence_angle_deg", "reflector_area_cm2",
                            "dispersion_halfangle_deg", "sniffer_rolloff_db_per_deg",
                            "sniffer_path_loss_exponent")}
    kw.update(over)
    return GeometryConfig(**kw)


def harvest_model(sc: Scenario) -> HarvestModel:
    t = sc["tag"]
    return calibrate_harvest(break_even_m=t["break_even_m"], leakage_uw=t["leakage_uw"],
                             office_fraction=t["office_fraction"], office_lux=t["office_lux"])


def _lux(sc: Scenario, env: str) -> float:
    return sc["tag"]["office_lux"] if env == "office" else 0.0


def _shaping(sc: Scenario) -> LcdShapingParams:
    s = sc["signal"]
    return LcdShapingParams(s["tau_charge_us"], s["tau_discharge_us"])


# -- packet loss -------------------------------------------------------------------

def packet_outcomes(sc: Scenario, seed: int, env: str, distances, angles) -> list[np.ndarray]:
    """Per-packet delivery flags at each (distance, angle) point.

    Each packet draws one log-normal fade for the harvest and one for the
    uplink; the same draws are reused at every point (common random numbers),
    so loss can only grow as the link gets worse.
    """
    c, t, exp = sc["channel"], sc["tag"], sc["experiment"]
    rng = np.random.default_rng(seed)
    n = exp["packets"]
    fade_h = rng.normal(0.0, c["fading_sigma_db"], n)
    fade_s = rng.normal(0.0, c["fading_sigma_db"], n)
    hm = harvest_model(sc)
    need = max(phase_power_uw("rx", t["v_operating"]), phase_power_uw("tx", t["v_operating"]))
    cfg = channel_config(sc, seed)
    out = []
    for d, a in zip(distances, angles):
        harvest = hm.harvest_uw(d, a, _lux(sc, env))
        p = received_power_dbm(cfg, geometry_config(sc, distance_m=d, incidence_angle_deg=a))
        ok = (harvest * 10 ** (fade_h / 10) >= need) & (p + fade_s >= c["reader_sensitivity_dbm"])
        if exp["decode_check"]:
            ok = _decode_check(sc, seed, ok, p + fade_s)
        out.append(ok)
    return out


def _decode_check(sc: Scenario, seed: int, ok: np.ndarray, rx_dbm: np.ndarray) -> np.ndarray:
    """Run the first ``decode_check`` surviving packets through synthesis and decoding."""
    s, c = sc["signal"], sc["channel"]
    ok = ok.copy()
    rng = np.random.default_rng([seed, 1])
    for i in np.flatnonzero(ok)[:sc["experiment"]["decode_check"]]:
        frame = build_frame(np.unpackbits(rng.integers(0, 256, s["payload_bytes"], dtype=np.uint8)),
                            s["chip_period_us"])
        clean = synthesize_uplink_waveform(frame, _shaping(sc), s["sample_rate_hz"])
        sigma = snr_sigma(clean, rx_dbm[i] - c["noise_floor_dbm"])
        wave = apply_channel(clean, ChannelConfig(awgn_sigma=sigma, seed=int(rng.integers(2**31))))
        try:
            r = dec.decode_swmsmf(wave, None, dec.ClockHint(s["chip_period_us"]), len(frame.payload))
            ok[i] = r.crc_ok and r.bit_errors(frame.bits) == 0
        except RetroVLCError:
            ok[i] = False
    return ok


def _plr_rows(sc: Scenario, seed: int, env: str, distances, angles):
    rows = []
    cfg = channel_config(sc, seed)
    hm = harvest_model(sc)
    for d, a, ok in zip(distances, angles, packet_outcomes(sc, seed, env, distances, angles)):
        geo = geometry_config(sc, distance_m=d, incidence_angle_deg=a)
        lost = int(len(ok) - ok.sum())
        rows.append((seed, env, d, a, hm.harvest_uw(d, a, _lux(sc, env)),
                     received_power_dbm(cfg, geo), len(ok), lost, lost / len(ok)))
    return rows


PLR_COLUMNS = ("seed", "environment", "distance_m", "angle_deg", "harvest_uw", "rx_power_dbm",
               "packets", "lost", "plr")


def run_plr_vs_distance(sc: Scenario, seed: int):
    _, _, dists = sc.sweep("geometry.distance_m", np.round(np.arange(0.2, 2.61, 0.1), 6))
    a = sc["geometry"]["incidence_angle_deg"]
    return [r for env in sc["tag"]["environment"]
            for r in _plr_rows(sc, seed, env, dists, [a] * len(dists))]


def run_plr_vs_angle(sc: Scenario, seed: int):
    _, _, angles = sc.sweep("geometry.incidence_angle_deg", np.arange(0.0, 81.0, 5.0))
    d = sc["geometry"]["distance_m"]
    return [r for env in sc["tag"]["environment"]
            for r in _plr_rows(sc, seed, env, [d] * len(angles), angles)]


# -- charging time -----------------------------------------------------------------

def run_charging_time(sc: Scenario, seed: int):
    _, _, dists = sc.sweep("geometry.distance_m", np.round(np.arange(0.1, 1.81, 0.1), 6))
    hm = harvest_model(sc)
    a = sc["geometry"]["incidence_angle_deg"]
    rows = []
    for env in ("dark", "office"):
        for d in dists:
            h = hm.harvest_uw(d, a, _lux(sc, env))
            rows.append((seed, env, d, a, h, hm.charging_time_ms(d, a, _lux(sc, env))))
    return rows


def summarize_charging(sc: Scenario, rows) -> dict:
    t = {(r[1], r[2]): r[5] for r in rows if r[0] == rows[0][0]}
    sep = {d: (t[("dark", d)] - t[("office", d)]) / t[("dark", d)] for (e, d) in t if e == "dark"}
    return {"separation": {f"{d:g}": round(v, 6) for d, v in sorted(sep.items())}}


# -- channel response --------------------------------------------------------------

def fit_path_loss_exponent(distances_m, power_dbm) -> float:
    """Least-squares n in P = P0 - 10 n log10(d)."""
    x = 10 * np.log10(np.asarray(distances_m, dtype=float))
    slope = np.polyfit(x, np.asarray(power_dbm, dtype=float), 1)[0]
    return float(-slope)


def run_channel_response(sc: Scenario, seed: int):
    _, _, dists = sc.sweep("geometry.distance_m", np.round(np.arange(0.3, 3.01, 0.1), 6))
    c = sc["channel"]
    rng = np.random.default_rng(seed)
    rows = []
    for config, n in (("retro", c["path_loss_exponent"]), ("omni", c["omni_path_loss_exponent"])):
        cfg = channel_config(sc, seed, path_loss_exponent=n)
        for d in dists:
            p = received_power_dbm(cfg, geometry_config(sc, distance_m=d, incidence_angle_deg=0.0))
            if c["measurement_noise_db"]:
                p += rng.normal(0.0, c["measurement_noise_db"])
            rows.append((seed, config, n, d, p))
    return rows


def summarize_channel(sc: Scenario, rows) -> dict:
    out = {}
    for config in ("retro", "omni"):
        sel = [r for r in rows if r[1] == config]
        out[f"fitted_n_{config}"] = round(fit_path_loss_exponent([r[3] for r in sel],
                                                                 [r[4] for r in sel]), 6)
    return out


# -- decoder comparison ------------------------------------------------------------

DECODERS = {
    "swmsmf": lambda w, n, tc: dec.decode_swmsmf(w, None, None, n, truth_centers_us=tc),
    "average": lambda w, n, tc: dec.decode_baseline_average(w, None, n, truth_centers_us=tc),
    "edge": lambda w, n, tc: dec.decode_baseline_edge(w, None, n, truth_centers_us=tc),
    "single_symbol": lambda w, n, tc: dec.decode_baseline_single_symbol(w, None, n,
                                                                        truth_centers_us=tc),
}


def compare_decoders(case: str, seed: int, snr_db: float) -> dict[str, tuple[int, int, float]]:
    """(bit errors, bits, mean |timing error| us) for each decoder on one fixture draw."""
    fx = make_fixture(case, seed, snr_db)
    truth = build_frame(fx.payload).bits
    out = {}
    for name, fn in DECODERS.items():
        try:
            r = fn(fx.wave, len(fx.payload), fx.bit_centers_us)
            err = r.bit_errors(truth)
            timing = float(np.nanmean(np.abs(r.per_bit_timing_error_us)))
        except RetroVLCError:
            err, timing = len(truth), float("nan")
        out[name] = (err, len(truth), timing)
    return out


def run_decoder_compare(sc: Scenario, seed: int):
    rows = []
    for case in CASES:
        for name, (err, n, timing) in compare_decoders(case, seed, sc["experiment"]["snr_db"]).items():
            rows.append((seed, case, name, err, n, err / n, timing))
    return rows


def summarize_decoders(sc: Scenario, rows) -> dict:
    table: dict[str, dict[str, float]] = {}
    for case in CASES:
        for name in DECODERS:
            sel = [r for r in rows if r[1] == case and r[2] == name]
            table.setdefault(case, {})[name] = round(sum(r[3] for r in sel) / sum(r[4] for r in sel), 8)
    return {"ber": table}


# -- convergence trace -----------------------------------------------------------

def run_lemma1_trace(sc: Scenario, seed: int):
    e = sc["experiment"]
    bit_us = 2 * sc["signal"]["chip_period_us"]
    err = dec.lemma1_error_trace(e["packet_bits"], e["k_true"], e["t0_error_us"], bit_us)
    return [(seed, i, v) for i, v in enumerate(err)]


# -- eavesdropping --------------------------------------------------------------

def run_eavesdrop_map(sc: Scenario, seed: int):
    g = sc["geometry"]
    cfg = channel_config(sc, seed)
    geo = geometry_config(sc, distance_m=g["sniffer_reader_distance_m"])
    rows = []
    for gain in g["sniffer_gains_db"]:
        for a in g["sniffer_angles_deg"]:
            for depth in g["sniffer_depths_m"]:
                d = geo.distance_m + depth
                p = eavesdrop_power_dbm(cfg, geo, a, d)
                rows.append((seed, gain, a, depth, p, int(p + gain >= g["sniffer_sensitivity_dbm"])))
    return rows


def summarize_eavesdrop(sc: Scenario, rows) -> dict:
    g = sc["geometry"]
    cfg = channel_config(sc)
    geo = geometry_config(sc, distance_m=g["sniffer_reader_distance_m"])
    out = {}
    for gain in g["sniffer_gains_db"]:
        m = eavesdrop_map(cfg, geo, g["sniffer_angles_deg"],
                          geo.distance_m + np.asarray(g["sniffer_depths_m"]),
                          g["sniffer_sensitivity_dbm"], gain)
        out[f"gain_{gain:g}dB"] = {"max_angle_deg": m.max_angle_deg,
                                   "max_depth_m": round(max(m.max_distance_m - geo.distance_m, 0.0), 6),
                                   "area_m2": round(m.area_m2(), 6)}
    return out


# -- working range -----------------------------------------------------------------

def run_working_range(sc: Scenario, seed: int):
    """Longest distance whose loss stays at or below ``plr_limit``, per sweep value."""
    section, key, values = sc.sweep("geometry.reflector_area_cm2", (4.0, 8.0, 14.21, 20.0, 28.0))
    dists = np.round(np.arange(0.1, 4.01, 0.05), 6)
    rows = []
    for env in sc["tag"]["environment"]:
        for v in values:
            sv = sc.override(section, key, v)
            a = sv["geometry"]["incidence_angle_deg"]
            oks = packet_outcomes(sv, seed, env, dists, [a] * len(dists))
            plr = np.array([1 - ok.mean() for ok in oks])
            good = dists[plr <= sc["tag"]["plr_limit"]]
            rows.append((seed, env, f"{section}.{key}", v, float(good.max()) if good.size else 0.0))
    return rows


# -- MAC ---------------------------------------------------------------------------

def run_mac_polling(sc: Scenario, seed: int):
    m, s = sc["mac"], sc["signal"]
    rng = np.random.default_rng(seed)
    serials = [int(x) for x in rng.choice(2 ** 32, m["n_tags"] + m["absent_polls"], replace=False)]
    tags = [Node(100 + i, "tag", (0.0, 0.0, 0.0), serial=sn) for i, sn in enumerate(serials[:m["n_tags"]])]
    reader = Node(0, "reader", (0.0, 0.0, 1.0))
    slot = slot_length_us(8 * s["payload_bytes"], s["chip_period_us"], m["guard_frac"])
    rows = []
    for rnd in range(m["rounds"]):
        order = [serials[i] for i in rng.permutation(len(serials))]
        st = run_polling_round([reader], tags, PollSchedule.sequential(0, order, slot))
        lat = np.array(sorted(st.latency_us.values())) if st.latency_us else np.zeros(1)
        rows.append((seed, rnd, st.polls, st.responses, st.timeouts, st.collisions,
                     st.max_concurrent_uplinks, float(lat.mean()), float(np.percentile(lat, 95))))
    return rows


def run_mac_contention(sc: Scenario, seed: int):
    m = sc["mac"]
    readers = [Node(i, "reader", (float(i), 0.0, 2.0)) for i in range(m["n_readers"])]
    section, key, values = sc.sweep("mac.sensing_delay_us", (m["sensing_delay_us"],))
    rows = []
    for v in values:
        mm = sc.override(section, key, v)["mac"]
        cfg = BackoffConfig(mm["cw_initial"], mm["cw_max"], mm["backoff_slot_us"],
                            mm["sensing_delay_us"], seed)
        st = run_reader_contention(readers, Traffic(mm["arrival_rate_hz"], mm["duration_s"] * 1e6,
                                                    mm["tx_us"]), cfg)
        rows.append((seed, f"{section}.{key}", v, st.attempts, st.successes, st.collisions,
                     st.deferrals, st.success_rate, st.mean_delay_us, st.delay_percentile_us(50),
                     st.delay_percentile_us(95), st.delay_percentile_us(99)))
    return rows


EXPERIMENTS: dict[str, Experiment] = {
    "plr_vs_distance": Experiment(PLR_COLUMNS, run_plr_vs_distance),
    "plr_vs_angle": Experiment(PLR_COLUMNS, run_plr_vs_angle),
    "charging_time": Experiment(("seed", "environment", "distance_m", "angle_deg", "harvest_uw",
                                 "charging_time_ms"), run_charging_time, summarize_charging),
    "channel_response": Experiment(("seed", "config", "path_loss_exponent", "distance_m",
                                    "rx_power_dbm"), run_channel_response, summarize_channel),
    "decoder_compare": Experiment(("seed", "case", "decoder", "bit_errors", "bits", "ber",
                                   "mean_abs_timing_error_us"), run_decoder_compare,
                                  summarize_decoders),
    "lemma1_trace": Experiment(("seed", "bit", "boundary_error_us"), run_lemma1_trace),
    "eavesdrop_map": Experiment(("seed", "sniffer_gain_db", "angle_deg", "depth_m", "power_dbm",
                                 "detectable"), run_eavesdrop_map, summarize_eavesdrop),
    "working_range": Experiment(("seed", "environment", "sweep_param", "sweep_value", "range_m"),
                                run_working_range),
    "mac_polling": Experiment(("seed", "round", "polls", "responses", "timeouts", "collisions",
                               "max_concurrent_uplinks", "mean_latency_us", "p95_latency_us"),
                              run_mac_polling),
    "mac_contention": Experiment(("seed", "sweep_param", "sweep_value", "attempts", "successes",
                                  "collisions", "deferrals", "success_rate", "mean_delay_us",
                                  "p50_delay_us", "p95_delay_us", "p99_delay_us"),
                                 run_mac_contention),
}


def energy_ledger_at(sc: Scenario, distance_m: float, env: str = "dark") -> EnergyLedger:
    """Ledger for a tag at ``distance_m`` under the scenario's calibration."""
    hm = harvest_model(sc)
    a = sc["geometry"]["incidence_angle_deg"]
    return EnergyLedger.at_voltage(hm.harvest_uw(distance_m, a, _lux(sc, env)),
                                   sc["tag"]["v_operating"])
