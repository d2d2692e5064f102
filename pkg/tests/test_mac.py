import numpy as np
import pytest
from hypothesis import given, strategies as st

from retrovlc.channel import ChannelConfig
from retrovlc.errors import ScheduleOverlap
from retrovlc.mac import (
    BackoffConfig,
    EventKind,
    EventQueue,
    Node,
    PollSchedule,
    Slot,
    Traffic,
    capture_winner,
    link_power_dbm,
    readers_and_tags,
    run_polling_round,
    run_reader_contention,
    slot_length_us,
    update_vitag_table,
    uplink_frame_us,
)


def _tags(n, z=0.0):
    return [Node(100 + i, "tag", (0.0, 0.0, z), serial=1000 + i) for i in range(n)]


def test_node_validation():
    with pytest.raises(ValueError):
        Node(1, "tag")
    with pytest.raises(ValueError):
        Node(1, "tag", serial=2**32)
    with pytest.raises(ValueError):
        Node(1, "lamp")
    with pytest.raises(ValueError):
        readers_and_tags([Node(1, "reader"), Node(1, "tag", serial=1)])


@given(st.lists(st.tuples(st.integers(0, 50), st.sampled_from(list(EventKind)),
                          st.integers(0, 5)), max_size=60))
def test_event_queue_order(items):
    q = EventQueue()
    for t, k, n in items:
        q.push(float(t), k, n)
    out = []
    while q:
        out.append(q.pop())
    keys = [(e.time_us, e.kind, e.node_id, e.seq) for e in out]
    assert keys == sorted(keys)


def test_event_queue_rejects_past():
    q = EventQueue()
    q.push(10.0, EventKind.ARRIVAL, 0)
    q.pop()
    with pytest.raises(ValueError):
        q.push(5.0, EventKind.ARRIVAL, 0)


def test_polling_latency_and_timeouts():
    tags = _tags(3)
    slot = slot_length_us(32)
    order = [1000, 4242, 1001, 1002]
    st_ = run_polling_round([Node(0, "reader", (0, 0, 1))], tags,
                            PollSchedule.sequential(0, order, slot))
    assert (st_.polls, st_.responses, st_.timeouts, st_.collisions) == (4, 3, 1, 0)
    assert st_.latency_us[1000] == pytest.approx(slot)
    assert st_.latency_us[1002] == pytest.approx(4 * slot)
    assert st_.max_concurrent_uplinks == 1


def test_schedule_overlap_rejected():
    bad = PollSchedule([Slot(0, 1, 0.0, 100.0), Slot(0, 2, 50.0, 100.0)])
    with pytest.raises(ScheduleOverlap):
        bad.validate()
    short = PollSchedule.sequential(0, [1000], uplink_frame_us(32) / 2)
    with pytest.raises(ScheduleOverlap):
        run_polling_round([Node(0, "reader")], _tags(1), short)


def test_link_power_behind_tag():
    tag = Node(9, "tag", (0, 0, 0), serial=1)
    assert link_power_dbm(Node(0, "reader", (0, 0, -1)), tag, ChannelConfig()) == -np.inf
    assert link_power_dbm(Node(0, "reader", (0, 0, 1.5)), tag, ChannelConfig()) == pytest.approx(-80.0)


def test_vitag_table_tie_and_flip():
    tag = Node(9, "tag", (0, 0, 0), serial=77)
    a, b = Node(2, "reader", (0.3, 0, 1.5)), Node(1, "reader", (-0.3, 0, 1.5))
    table = update_vitag_table([a, b], [tag], ChannelConfig())
    assert table.reader_of(77) == 1  # equal power: lowest id
    moved = Node(9, "tag", (0.2, 0, 0), serial=77)
    assert update_vitag_table([a, b], [moved], ChannelConfig()).reader_of(77) == 2
    far = Node(9, "tag", (0, 0, -50), serial=77)
    assert update_vitag_table([a, b], [far], ChannelConfig()).reader_of(77) is None


def test_table_schedule_parallel_readers():
    readers = [Node(0, "reader", (0, 0, 1)), Node(1, "reader", (10, 0, 1))]
    tags = _tags(3) + [Node(200 + i, "tag", (10, 0, 0), serial=2000 + i) for i in range(2)]
    table = update_vitag_table(readers, tags, ChannelConfig())
    assert table.tags_of(0) == [1000, 1001, 1002] and table.tags_of(1) == [2000, 2001]
    st_ = run_polling_round(readers, tags, PollSchedule.from_table(table, slot_length_us()))
    assert st_.responses == 5 and st_.collisions == 0


def test_capture():
    assert capture_winner({1: -60.0, 2: -70.0}) == 1
    assert capture_winner({1: -60.0, 2: -62.0}) is None
    assert capture_winner({3: -80.0}) == 3


def test_contention_deterministic():
    readers = [Node(i, "reader") for i in range(4)]
    tr = Traffic(10.0, 5e6)
    cfg = BackoffConfig(sensing_delay_us=500.0, seed=9)
    a, b = run_reader_contention(readers, tr, cfg), run_reader_contention(readers, tr, cfg)
    assert (a.attempts, a.successes, a.collisions, a.delays_us) == \
        (b.attempts, b.successes, b.collisions, b.delays_us)
    assert a.collisions > 0


def test_contention_zero_delay_no_collisions():
    readers = [Node(i, "reader") for i in range(5)]
    for seed in range(5):
        s = run_reader_contention(readers, Traffic(10.0, 5e6), BackoffConfig(seed=seed))
        assert s.collisions == 0 and s.successes == s.attempts


def test_contention_simultaneous_arrivals():
    readers = [Node(i, "reader") for i in range(2)]
    s = run_reader_contention(readers, Traffic(arrivals_us=([0.0], [0.0]), duration_us=1e6),
                              BackoffConfig(sensing_delay_us=0.0))
    assert s.successes == 2 and s.collisions == 0 and s.deferrals >= 1


def test_capture_rescues_collision():
    readers = [Node(i, "reader") for i in range(2)]
    tr = Traffic(arrivals_us=([0.0], [10.0]), duration_us=1e6)
    cfg = BackoffConfig(sensing_delay_us=100.0)
    assert run_reader_contention(readers, tr, cfg).collisions == 2
    cap = run_reader_contention(readers, tr, cfg, tag_power_dbm={0: -60.0, 1: -75.0})
    assert cap.collisions == 1 and cap.successes == 2
