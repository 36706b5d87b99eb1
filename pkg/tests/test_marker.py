import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodeperf import marker
from nodeperf.marker import (
    MarkerArgumentError,
    MarkerCapacityError,
    MarkerOverlapError,
    MarkerProtocolError,
    MarkerState,
    MarkerStateError,
    format_marker_file,
    parse_marker_file,
    read_marker_file,
)


class FakeCounters:
    """Per-core counters that advance by a scripted amount on every read."""

    def __init__(self, step=lambda core, n: 10 + core, width=48, start=0):
        self.reads = {}
        self.values = {}
        self.step = step
        self.mod = 1 << width
        self.start = start

    def __call__(self, core):
        n = self.reads.get(core, 0)
        self.reads[core] = n + 1
        v = self.values.get(core, self.start) + self.step(core, n)
        self.values[core] = v
        return {"CPU_CLK_UNHALTED_CORE": v % self.mod, "EV": (2 * v) % self.mod}


def _clock():
    t = iter(range(0, 10**12, 1000))
    return lambda: next(t)


def test_accumulates_over_calls():
    m = MarkerState(1, 2, FakeCounters(), clock=_clock())
    a = m.register_region("Main")
    b = m.register_region("Accum")
    assert m.register_region("Main") == a
    m.start_region(0, 0)
    m.stop_region(0, 0, a)
    for _ in range(3):
        m.start_region(0, 0)
        m.stop_region(0, 0, b)
    res = m.close()
    main, accum = res.region("Main").rows[0], res.region("Accum").rows[0]
    assert (main.call_count, accum.call_count) == (1, 3)
    assert main.events == {"CPU_CLK_UNHALTED_CORE": 10, "EV": 20}
    assert accum.events == {"CPU_CLK_UNHALTED_CORE": 30, "EV": 60}
    assert accum.time_ns == 3000


def test_wraparound_inside_region():
    m = MarkerState(1, 1, FakeCounters(step=lambda c, n: 100, width=40, start=(1 << 40) - 150), counter_width=40)
    r = m.register_region("R")
    m.start_region(0, 0)
    m.stop_region(0, 0, r)
    assert m.results().regions[0].rows[0].events["CPU_CLK_UNHALTED_CORE"] == 100


def test_errors():
    m = MarkerState(2, 1, FakeCounters())
    r = m.register_region("R")
    with pytest.raises(MarkerCapacityError):
        m.register_region("Other")
    with pytest.raises(MarkerStateError, match="without a matching start"):
        m.stop_region(0, 0, r)
    m.start_region(0, 0)
    with pytest.raises(MarkerOverlapError, match="nest or overlap"):
        m.start_region(0, 0)
    with pytest.raises(MarkerArgumentError):
        m.stop_region(0, 0, 5)
    with pytest.raises(MarkerArgumentError):
        m.start_region(2, 0)
    with pytest.raises(MarkerStateError, match="still active"):
        m.close()
    m.stop_region(0, 0, r)
    m.close()
    with pytest.raises(MarkerStateError):
        m.start_region(0, 0)
    with pytest.raises(MarkerArgumentError):
        MarkerState(0, 1, FakeCounters())


def test_threads_are_independent():
    lock = threading.Lock()
    fake = FakeCounters(step=lambda c, n: 5)

    def reader(core):
        with lock:
            return fake(core)

    m = MarkerState(4, 1, reader)
    r = m.register_region("R")

    def work(tid):
        for _ in range(200):
            m.start_region(tid, tid)
            m.stop_region(tid, tid, r)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    rows = m.close().regions[0].rows
    assert [row.call_count for row in rows] == [200] * 4
    assert all(row.events["CPU_CLK_UNHALTED_CORE"] == 1000 for row in rows)


def test_file_roundtrip(tmp_path):
    m = MarkerState(2, 3, FakeCounters(), group="FLOPS_DP")
    for name in ("A", "B", "Empty"):
        m.register_region(name)
    m.start_region(1, 3)
    m.stop_region(1, 3, 1)
    path = tmp_path / "out.txt"
    res = m.close(path)
    back = read_marker_file(path)
    assert back == res
    assert back.group == "FLOPS_DP" and [r.name for r in back.regions] == ["A", "B", "Empty"]
    assert back.region("B").per_core() == {3: {"CPU_CLK_UNHALTED_CORE": 13, "EV": 26}}
    assert format_marker_file(back) == path.read_text()


@pytest.mark.parametrize("text", [
    "",
    "group G\nthreads x\nregions 0\n",
    "group G\nthreads 1\nregions 1\n0 0 1 cycles=1 time_ns=1\n",
    "group G\nthreads 1\nregions 1\nregion R\n0 0 1 EV=1\n",
    "group G\nthreads 1\nregions 1\nregion R\n3 0 1 cycles=1 time_ns=1\n",
    "group G\nthreads 1\nregions 2\nregion R\n",
])
def test_protocol_errors(text):
    with pytest.raises(MarkerProtocolError):
        parse_marker_file(text)


def test_missing_result_file(tmp_path):
    with pytest.raises(MarkerProtocolError):
        read_marker_file(tmp_path / "none")


def test_module_api_requires_environment(monkeypatch):
    monkeypatch.delenv(marker.FILE_ENV, raising=False)
    monkeypatch.delenv(marker.EVENTS_ENV, raising=False)
    with pytest.raises(MarkerProtocolError, match="nodeperf perfctr -m"):
        marker.init(1, 1)


def test_processor_id_is_a_cpu():
    assert marker.get_processor_id() >= 0


# -- random call sequences ---------------------------------------------------------

OPS = st.lists(
    st.tuples(st.sampled_from(["start", "stop"]), st.integers(0, 1), st.integers(0, 2)),
    max_size=40,
)


def run_sequence(ops):
    """Drive a MarkerState and an independent model side by side.

    Returns (outcomes, accumulated) from both; each outcome is None or the
    exception class name.
    """
    steps = {0: [3, 1, 4, 1, 5, 9, 2, 6], 1: [2, 7, 1, 8, 2, 8]}
    counters = {0: 0, 1: 0}
    reads = {0: 0, 1: 0}

    def reader(core):
        seq = steps[core]
        counters[core] += seq[reads[core] % len(seq)]
        reads[core] += 1
        return {"CPU_CLK_UNHALTED_CORE": counters[core]}

    m = MarkerState(2, 3, reader, clock=_clock())
    for name in ("R0", "R1", "R2"):
        m.register_region(name)
    got, want = [], []
    active = {}
    model = {}
    for op, tid, rid in ops:
        core = tid
        try:
            if op == "start":
                m.start_region(tid, core)
            else:
                m.stop_region(tid, core, rid)
            got.append(None)
        except Exception as exc:  # noqa: BLE001
            got.append(type(exc).__name__)
        # model: the reader already advanced if the call got that far
        if op == "start":
            if tid in active:
                want.append("MarkerOverlapError")
            else:
                active[tid] = counters[core]
                want.append(None)
        else:
            if tid not in active:
                want.append("MarkerStateError")
            else:
                key = (tid, rid)
                model[key] = model.get(key, 0) + counters[core] - active.pop(tid)
                want.append(None)
    acc = {}
    for r in m.results().regions:
        for row in r.rows:
            acc[(row.thread_id, m.regions.index(r.name))] = row.events["CPU_CLK_UNHALTED_CORE"]
    return got, want, acc, model


@settings(max_examples=300, deadline=None)
@given(OPS)
def test_random_sequences_match_model(ops):
    got, want, acc, model = run_sequence(ops)
    assert got == want
    assert acc == {k: v for k, v in model.items()}
