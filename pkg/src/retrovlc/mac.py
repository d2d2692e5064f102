"""Discrete-event model of the multiple-access layer.

Readers poll tags by serial number, tags answer in assigned slots, readers
share the downlink with carrier-sense ALOHA, and every tag is served by the
reader it hears best.
"""
from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .channel import ChannelConfig, GeometryConfig, received_power_dbm
from .errors import ScheduleOverlap
from .signal import DEFAULT_CHIP_PERIOD_US, FLUSH_CHIPS, GUARD_CHIPS, LEAD_CHIPS, PREAMBLE_CHIPS

READER_SENSITIVITY_DBM = -90.0
CAPTURE_DB = 6.0


class EventKind(IntEnum):
    # order doubles as the tie-break rank at equal times
    TX_END = 0
    POLL_SENT = 1
    SLOT_START = 2
    RESPONSE = 3
    TIMEOUT = 4
    COLLISION = 5
    ARRIVAL = 6
    BACKOFF_END = 7
    TABLE_UPDATE = 8


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    serial: int | None = None
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("reader", "tag"):
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.kind == "tag" and (self.serial is None or not 0 <= self.serial < 2 ** 32):
            raise ValueError("tags need a 32-bit serial")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))


def readers_and_tags(nodes) -> tuple[list[Node], list[Node]]:
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("node ids must be unique")
    return [n for n in nodes if n.kind == "reader"], [n for n in nodes if n.kind == "tag"]


@dataclass(order=True, frozen=True)
class Event:
    time_us: float
    kind: EventKind
    node_id: int
    seq: int
    data: dict = field(default_factory=dict, compare=False)


class EventQueue:
    """Time-ordered queue; ties go to kind rank, then node id, then insertion."""

    def __init__(self):
        self._heap: list[Event] = []
        self._seq = itertools.count()
        self.now = 0.0
        self.log: list[Event] = []

    def push(self, time_us: float, kind: EventKind, node_id: int, **data) -> Event:
        if time_us < self.now:
            raise ValueError(f"event at {time_us} us is in the past (now {self.now} us)")
        ev = Event(float(time_us), kind, node_id, next(self._seq), data)
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now = ev.time_us
        self.log.append(ev)
        return ev

    def __bool__(self) -> bool:
        return bool(self._heap)


# -- reader -> tag assignment ---------------------------------------------------

@dataclass
class VitagTable:
    assignment: dict[int, tuple[int, float]] = field(default_factory=dict)  # serial -> (reader, dBm)

    def reader_of(self, serial: int) -> int | None:
        hit = self.assignment.get(serial)
        return None if hit is None else hit[0]

    def tags_of(self, reader_id: int) -> list[int]:
        return sorted(s for s, (r, _) in self.assignment.items() if r == reader_id)

    def __len__(self) -> int:
        return len(self.assignment)


def link_power_dbm(reader: Node, tag: Node, channel: ChannelConfig,
                   geometry: GeometryConfig = GeometryConfig()) -> float:
    """Uplink power from ``tag`` at ``reader``; -inf when the reader is behind the tag."""
    v = np.subtract(reader.position, tag.position)
    d = float(np.linalg.norm(v))
    if d == 0:
        raise ValueError(f"reader {reader.id} and tag {tag.id} coincide")
    normal = np.asarray(tag.normal, dtype=float)
    cos = float(v @ normal / (d * np.linalg.norm(normal)))
    angle = float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    if angle >= 90.0:
        return -np.inf
    return float(received_power_dbm(channel, geometry.with_(distance_m=d, incidence_angle_deg=angle)))


def update_vitag_table(readers, tags, channel: ChannelConfig,
                       sensitivity_dbm: float = READER_SENSITIVITY_DBM,
                       geometry: GeometryConfig = GeometryConfig()) -> VitagTable:
    """Map each reachable tag to its strongest reader; ties go to the lowest reader id."""
    table = VitagTable()
    for tag in tags:
        best = None
        for reader in sorted(readers, key=lambda r: r.id):
            p = link_power_dbm(reader, tag, channel, geometry)
            if p >= sensitivity_dbm and (best is None or p > best[1]):
                best = (reader.id, p)
        if best is not None:
            table.assignment[tag.serial] = best
    return table


# -- polling ---------------------------------------------------------------------

def uplink_frame_us(payload_bits: int = 32, chip_period_us: float = DEFAULT_CHIP_PERIOD_US) -> float:
    chips = LEAD_CHIPS + len(PREAMBLE_CHIPS) + 2 * (payload_bits + 8) + FLUSH_CHIPS + GUARD_CHIPS
    return chips * chip_period_us


def slot_length_us(payload_bits: int = 32, chip_period_us: float = DEFAULT_CHIP_PERIOD_US,
                   guard_frac: float = 0.10) -> float:
    return uplink_frame_us(payload_bits, chip_period_us) * (1.0 + guard_frac)


@dataclass(frozen=True)
class Slot:
    reader_id: int
    serial: int
    start_us: float
    length_us: float

    @property
    def end_us(self) -> float:
        return self.start_us + self.length_us


@dataclass
class PollSchedule:
    slots: list[Slot]

    @classmethod
    def sequential(cls, reader_id: int, serials, slot_us: float, start_us: float = 0.0) -> "PollSchedule":
        return cls([Slot(reader_id, s, start_us + i * slot_us, slot_us) for i, s in enumerate(serials)])

    @classmethod
    def from_table(cls, table: VitagTable, slot_us: float, start_us: float = 0.0) -> "PollSchedule":
        """Each reader polls only its own tags, all readers in parallel."""
        readers = sorted({r for r, _ in table.assignment.values()})
        slots = []
        for r in readers:
            slots += cls.sequential(r, table.tags_of(r), slot_us, start_us).slots
        return cls(slots)

    def validate(self) -> None:
        by_reader: dict[int, list[Slot]] = {}
        for s in self.slots:
            if s.length_us <= 0:
                raise ScheduleOverlap(f"slot for serial {s.serial} has no length")
            by_reader.setdefault(s.reader_id, []).append(s)
        for r, slots in by_reader.items():
            slots = sorted(slots, key=lambda s: s.start_us)
            for a, b in zip(slots, slots[1:]):
                if b.start_us < a.end_us:
                    raise ScheduleOverlap(
                        f"reader {r}: slot for {b.serial} starts before slot for {a.serial} ends")


@dataclass
class PollingStats:
    polls: int = 0
    responses: int = 0
    timeouts: int = 0
    collisions: int = 0
    max_concurrent_uplinks: int = 0
    latency_us: dict[int, float] = field(default_factory=dict)
    events: list[Event] = field(default_factory=list, repr=False)


def run_polling_round(readers, tags, schedule: PollSchedule, *, payload_bits: int = 32,
                      chip_period_us: float = DEFAULT_CHIP_PERIOD_US,
                      round_start_us: float = 0.0) -> PollingStats:
    """Play one schedule of polls.

    Only the tag whose serial matches a poll answers, and only within that
    slot.  Latency is measured from ``round_start_us`` to the end of the slot.
    """
    schedule.validate()
    reader_ids = {r.id for r in readers}
    by_serial = {t.serial: t for t in tags}
    frame_us = uplink_frame_us(payload_bits, chip_period_us)
    q = EventQueue()
    for s in schedule.slots:
        if s.reader_id not in reader_ids:
            raise ValueError(f"slot refers to unknown reader {s.reader_id}")
        if frame_us > s.length_us:
            raise ScheduleOverlap(f"a {frame_us} us response does not fit a {s.length_us} us slot")
        q.push(s.start_us, EventKind.POLL_SENT, s.reader_id, slot=s)

    stats = PollingStats()
    active: dict[int, int] = {}  # reader -> uplinks in flight
    while q:
        ev = q.pop()
        if ev.kind == EventKind.POLL_SENT:
            stats.polls += 1
            slot = ev.data["slot"]
            tag = by_serial.get(slot.serial)
            if tag is None:
                q.push(slot.end_us, EventKind.TIMEOUT, slot.reader_id, slot=slot)
            else:
                q.push(slot.start_us, EventKind.SLOT_START, tag.id, slot=slot)
        elif ev.kind == EventKind.SLOT_START:
            slot = ev.data["slot"]
            n = active.get(slot.reader_id, 0) + 1
            active[slot.reader_id] = n
            stats.max_concurrent_uplinks = max(stats.max_concurrent_uplinks, n)
            if n > 1:
                stats.collisions += 1
                q.push(ev.time_us, EventKind.COLLISION, ev.node_id, slot=slot)
            q.push(slot.start_us + frame_us, EventKind.RESPONSE, ev.node_id, slot=slot)
        elif ev.kind == EventKind.RESPONSE:
            slot = ev.data["slot"]
            active[slot.reader_id] -= 1
            stats.responses += 1
            stats.latency_us[slot.serial] = slot.end_us - round_start_us
        elif ev.kind == EventKind.TIMEOUT:
            stats.timeouts += 1
    stats.events = q.log
    return stats


# -- reader contention -------------------------------------------------------------

@dataclass(frozen=True)
class BackoffConfig:
    cw_initial: int = 4
    cw_max: int = 64
    slot_us: float = 1000.0
    sensing_delay_us: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.cw_initial <= self.cw_max:
            raise ValueError("need 1 <= cw_initial <= cw_max")
        if self.slot_us <= 0 or self.sensing_delay_us < 0:
            raise ValueError("slot must be positive and sensing delay non-negative")


@dataclass(frozen=True)
class Traffic:
    arrival_rate_hz: float = 5.0   # per reader, Poisson
    duration_us: float = 10e6
    tx_us: float = 20_000.0        # one downlink poll
    arrivals_us: tuple | None = None  # explicit per-reader arrival times override the Poisson draw


@dataclass
class ContentionStats:
    attempts: int = 0
    successes: int = 0
    collisions: int = 0
    deferrals: int = 0
    delays_us: list[float] = field(default_factory=list, repr=False)

    @property
    def success_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    @property
    def mean_delay_us(self) -> float:
        return float(np.mean(self.delays_us)) if self.delays_us else 0.0

    def delay_percentile_us(self, q: float) -> float:
        return float(np.percentile(self.delays_us, q)) if self.delays_us else 0.0


def capture_winner(powers_dbm: dict[int, float], threshold_db: float = CAPTURE_DB) -> int | None:
    """Reader whose signal exceeds the sum of the others by ``threshold_db``, if any."""
    if len(powers_dbm) == 1:
        return next(iter(powers_dbm))
    best = max(sorted(powers_dbm), key=lambda r: powers_dbm[r])
    rest = sum(10 ** (p / 10) for r, p in powers_dbm.items() if r != best)
    if rest == 0 or powers_dbm[best] - 10 * np.log10(rest) >= threshold_db:
        return best
    return None


def _arrivals(readers, traffic: Traffic, seed: int) -> dict[int, np.ndarray]:
    if traffic.arrivals_us is not None:
        return {r.id: np.sort(np.asarray(a, dtype=float))
                for r, a in zip(readers, traffic.arrivals_us)}
    streams = np.random.SeedSequence(seed).spawn(len(readers))
    out = {}
    for r, ss in zip(readers, streams):
        rng = np.random.default_rng(ss)
        n = rng.poisson(traffic.arrival_rate_hz * traffic.duration_us * 1e-6)
        out[r.id] = np.sort(rng.uniform(0.0, traffic.duration_us, n))
    return out


def run_reader_contention(readers, traffic: Traffic, backoff_cfg: BackoffConfig = BackoffConfig(),
                          tag_power_dbm: dict[int, float] | None = None) -> ContentionStats:
    """Non-persistent carrier-sense ALOHA among readers sharing one tag.

    A reader senses the medium busy only for transmissions that began at least
    ``sensing_delay_us`` earlier.  Overlapping transmissions collide unless one
    captures the tag (``tag_power_dbm`` gives each reader's power there).
    """
    readers = sorted(readers, key=lambda r: r.id)
    cfg = backoff_cfg
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(len(readers) + 1)[-1])
    q = EventQueue()
    backlog: dict[int, list[float]] = {r.id: [] for r in readers}
    for rid, times in _arrivals(readers, traffic, cfg.seed).items():
        for t in times:
            q.push(float(t), EventKind.ARRIVAL, rid)
    cw = {r.id: cfg.cw_initial for r in readers}
    busy = {r.id: False for r in readers}   # reader has a packet in service
    on_air: dict[int, dict] = {}             # reader -> current transmission
    stats = ContentionStats()

    def backoff(rid: int, now: float) -> None:
        slots = int(rng.integers(1, cw[rid] + 1))
        q.push(now + slots * cfg.slot_us, EventKind.BACKOFF_END, rid)

    def attempt(rid: int, now: float) -> None:
        sensed = any(tx["start"] <= now - cfg.sensing_delay_us for tx in on_air.values())
        if sensed:
            stats.deferrals += 1
            backoff(rid, now)
            return
        stats.attempts += 1
        tx = {"start": now, "overlap": set()}
        for other, otx in on_air.items():
            otx["overlap"].add(rid)
            tx["overlap"].add(other)
        on_air[rid] = tx
        q.push(now + traffic.tx_us, EventKind.TX_END, rid)

    while q:
        ev = q.pop()
        rid = ev.node_id
        if ev.kind == EventKind.ARRIVAL:
            backlog[rid].append(ev.time_us)
            if not busy[rid]:
                busy[rid] = True
                attempt(rid, ev.time_us)
        elif ev.kind == EventKind.BACKOFF_END:
            attempt(rid, ev.time_us)
        elif ev.kind == EventKind.TX_END:
            tx = on_air.pop(rid)
            ok = not tx["overlap"]
            if not ok and tag_power_dbm is not None:
                group = {r: tag_power_dbm[r] for r in tx["overlap"] | {rid}}
                ok = capture_winner(group) == rid
            if ok:
                stats.successes += 1
                stats.delays_us.append(ev.time_us - backlog[rid].pop(0))
                cw[rid] = cfg.cw_initial
                if backlog[rid]:
                    attempt(rid, ev.time_us)
                else:
                    busy[rid] = False
            else:
                stats.collisions += 1
                q.push(ev.time_us, EventKind.COLLISION, rid)
                cw[rid] = min(2 * cw[rid], cfg.cw_max)
                backoff(rid, ev.time_us)
    return stats
