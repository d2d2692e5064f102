"""Scenario files: sectioned ``key = value`` text with typed, validated fields."""
from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError

EXPERIMENTS = ("plr_vs_distance", "plr_vs_angle", "charging_time", "channel_response",
               "decoder_compare", "lemma1_trace", "eavesdrop_map", "working_range",
               "mac_polling", "mac_contention")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    """Comma list, or ``start:stop:step`` with an inclusive stop."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ValueError("range must be start:stop:step with step > 0 and stop >= start")
        n = int(np.floor((parts[1] - parts[0]) / parts[2] + 1e-9)) + 1
        return tuple(round(parts[0] + i * parts[2], 12) for i in range(n))
    return tuple(float(p) for p in text.split(",") if p.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _names(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "signal": {
        "chip_period_us": (float, 1000.0),
        "sample_rate_hz": (float, 20_000.0),
        "tau_charge_us": (float, 300.0),
        "tau_discharge_us": (float, 450.0),
        "payload_bytes": (int, 4),
    },
    "channel": {
        "path_loss_exponent": (float, 2.5),
        "omni_path_loss_exponent": (float, 4.0),
        "ref_distance_m": (float, 1.5),
        "ref_rx_power_dbm": (float, -80.0),
        "angle_breakpoint_deg": (float, 20.0),
        "angle_rolloff_db_per_deg": (float, 1.0),
        "reader_sensitivity_dbm": (float, -90.0),
        "noise_floor_dbm": (float, -105.0),
        "fading_sigma_db": (float, 0.5),
        "measurement_noise_db": (float, 0.0),
        "clock_ratio_k": (float, 1.0),
    },
    "geometry": {
        "distance_m": (float, 1.5),
        "incidence_angle_deg": (float, 0.0),
        "reflector_area_cm2": (float, 8.2 * 5.2 / 3.0),
        "dispersion_halfangle_deg": (float, 5.0),
        "sniffer_rolloff_db_per_deg": (float, 3.0),
        "sniffer_path_loss_exponent": (float, 4.7),
        "sniffer_sensitivity_dbm": (float, -100.0),
        "sniffer_reader_distance_m": (float, 0.6),
        "sniffer_gains_db": (_floats, (0.0,)),
        "sniffer_angles_deg": (_floats, _floats("-40:40:1")),
        "sniffer_depths_m": (_floats, _floats("0:4:0.05")),
    },
    "tag": {
        "environment": (_names, ("dark",)),
        "office_lux": (float, 300.0),
        "v_operating": (float, 2.0),
        "leakage_uw": (float, 0.5),
        "break_even_m": (float, 1.7),
        "office_fraction": (float, 0.13),
        "plr_limit": (float, 0.8),
    },
    "mac": {
        "n_readers": (int, 1),
        "n_tags": (int, 10),
        "rounds": (int, 1),
        "absent_polls": (int, 0),
        "guard_frac": (float, 0.10),
        "cw_initial": (int, 4),
        "cw_max": (int, 64),
        "backoff_slot_us": (float, 1000.0),
        "sensing_delay_us": (float, 0.0),
        "arrival_rate_hz": (float, 2.0),
        "duration_s": (float, 10.0),
        "tx_us": (float, 20_000.0),
    },
    "experiment": {
        "name": (_names, None),
        "seeds": (_ints, (0,)),
        "sweep_param": (str, ""),
        "sweep_values": (_floats, ()),
        "packets": (int, 1000),
        "decode_check": (int, 0),
        "snr_db": (float, 15.0),
        "packet_bits": (int, 512),
        "k_true": (float, 1.01),
        "t0_error_us": (float, 50.0),
    },
}


@dataclass
class Scenario:
    text: str
    sections: dict[str, dict] = field(default_factory=dict)
    lines: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    @property
    def experiments(self) -> tuple[str, ...]:
        return self.sections["experiment"]["name"]

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.sections["experiment"]["seeds"]

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def with_seeds(self, seeds) -> "Scenario":
        sections = {k: dict(v) for k, v in self.sections.items()}
        sections["experiment"]["seeds"] = tuple(int(s) for s in seeds)
        return Scenario(self.text, sections, self.lines)

    def sweep(self, default_param: str, default_values) -> tuple[str, str, tuple[float, ...]]:
        """(section, key, values) of the swept parameter, falling back to the defaults."""
        exp = self.sections["experiment"]
        param = exp["sweep_param"] or default_param
        values = exp["sweep_values"] or tuple(default_values)
        section, key = param.split(".")
        return section, key, values

    def override(self, section: str, key: str, value) -> "Scenario":
        sections = {k: dict(v) for k, v in self.sections.items()}
        sections[section][key] = value
        return Scenario(self.text, sections, self.lines)


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    out, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = no
    return out


def parse_scenario(text: str) -> Scenario:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ScenarioError(f"duplicate key in [{e.section}]", e.lineno, e.option) from None
    except configparser.DuplicateSectionError as e:
        raise ScenarioError(f"duplicate section [{e.section}]", e.lineno) from None
    except configparser.MissingSectionHeaderError as e:
        raise ScenarioError("key outside any section", e.lineno) from None
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ScenarioError("unparseable line", lineno) from None

    lines = _line_numbers(text)
    sections: dict[str, dict] = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ScenarioError(f"unknown section [{name}]", lines.get((name, "")))
    for name, keys in SCHEMA.items():
        values = {k: default for k, (_, default) in keys.items()}
        if parser.has_section(name):
            for key, raw in parser.items(name):
                where = lines.get((name, key))
                if key not in keys:
                    raise ScenarioError(f"unknown key in [{name}]", where, key)
                conv = keys[key][0]
                try:
                    values[key] = conv(raw)
                except ValueError as e:
                    raise ScenarioError(f"bad value {raw!r}: {e}", where, key) from None
        sections[name] = values

    exp = sections["experiment"]
    where = lines.get(("experiment", "name"))
    if not exp["name"]:
        raise ScenarioError("[experiment] needs a name", where, "name")
    for n in exp["name"]:
        if n not in EXPERIMENTS:
            raise ScenarioError(f"unknown experiment {n!r}", where, "name")
    if not exp["seeds"]:
        raise ScenarioError("seeds must not be empty", lines.get(("experiment", "seeds")), "seeds")
    if exp["sweep_param"]:
        sec, _, key = exp["sweep_param"].partition(".")
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ScenarioError(f"sweep_param {exp['sweep_param']!r} names no parameter",
                                lines.get(("experiment", "sweep_param")), "sweep_param")
    for env in sections["tag"]["environment"]:
        if env not in ("dark", "office"):
            raise ScenarioError(f"environment must be dark or office, not {env!r}",
                                lines.get(("tag", "environment")), "environment")
    return Scenario(text, sections, lines)


def load_scenario(path) -> Scenario:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario: {e}") from None
    return parse_scenario(text)
