"""Region markers: restrict counting to named code regions.

Typical use inside an instrumented program::

    from nodeperf import marker

    marker.init(num_threads=1, num_regions=2)
    main_id = marker.register_region("Main")
    accum_id = marker.register_region("Accum")
    cpu = marker.get_processor_id()

    marker.start_region(0, cpu)
    ...                                   # region "Main"
    marker.stop_region(0, cpu, main_id)
    for _ in range(n):
        marker.start_region(0, cpu)
        ...                               # region "Accum"
        marker.stop_region(0, cpu, accum_id)
    marker.close()

``start_region`` snapshots the counters of the calling thread's core and
``stop_region`` attributes the difference to the given region. Counts of
repeated executions accumulate. Regions cannot nest or overlap on one
thread. ``close`` writes the result file named by ``NODEPERF_MARKER_FILE``,
which ``nodeperf perfctr -m`` reads back.
"""

from __future__ import annotations

import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .counters.session import parse_event_list, wrap_delta

__all__ = [
    "MarkerArgumentError",
    "MarkerCapacityError",
    "MarkerError",
    "MarkerOverlapError",
    "MarkerProtocolError",
    "MarkerResults",
    "MarkerState",
    "MarkerStateError",
    "RegionResult",
    "ThreadRow",
    "close",
    "get_processor_id",
    "init",
    "parse_marker_file",
    "read_marker_file",
    "register_region",
    "start_region",
    "stop_region",
]

FILE_ENV = "NODEPERF_MARKER_FILE"
EVENTS_ENV = "NODEPERF_MARKER_EVENTS"
GROUP_ENV = "NODEPERF_MARKER_GROUP"
CPUS_ENV = "NODEPERF_MARKER_CPUS"
CYCLES_EVENT = "CPU_CLK_UNHALTED_CORE"


class MarkerError(Exception):
    pass


class MarkerArgumentError(MarkerError, ValueError):
    pass


class MarkerCapacityError(MarkerError):
    pass


class MarkerStateError(MarkerError, RuntimeError):
    pass


class MarkerOverlapError(MarkerStateError):
    pass


class MarkerProtocolError(MarkerError):
    pass


@dataclass
class _Accumulator:
    core_id: int = -1
    call_count: int = 0
    events: dict = field(default_factory=dict)
    cycles: int = 0
    time_ns: int = 0


@dataclass
class _Snapshot:
    core_id: int
    counts: dict
    timestamp_ns: int


class MarkerState:
    """Per-thread, per-region accumulation of counter deltas.

    ``reader(core_id)`` returns the current raw counts (event -> value) of
    that core. Each thread only touches its own slot, so distinct threads
    may start and stop regions concurrently; ``register_region`` and
    ``close`` belong to one coordinating thread.
    """

    def __init__(
        self,
        num_threads: int,
        num_regions: int,
        reader: Callable[[int], dict],
        *,
        group: str = "custom",
        clock: Callable[[], int] = time.monotonic_ns,
        counter_width: int = 48,
        cycles_event: str = CYCLES_EVENT,
    ):
        if num_threads < 1 or num_regions < 1:
            raise MarkerArgumentError(
                f"need at least one thread and one region, got {num_threads} and {num_regions}"
            )
        self.num_threads = num_threads
        self.num_regions = num_regions
        self.group = group
        self.reader = reader
        self.clock = clock
        self.counter_width = counter_width
        self.cycles_event = cycles_event
        self.regions: list[str] = []
        self._ids: dict[str, int] = {}
        self._active: list[_Snapshot | None] = [None] * num_threads
        self._acc: list[dict[int, _Accumulator]] = [{} for _ in range(num_threads)]
        self.closed = False

    def register_region(self, name: str) -> int:
        if name in self._ids:
            return self._ids[name]
        if len(self.regions) >= self.num_regions:
            raise MarkerCapacityError(
                f"cannot register {name!r}: capacity of {self.num_regions} regions reached"
            )
        self._ids[name] = len(self.regions)
        self.regions.append(name)
        return self._ids[name]

    def _check_thread(self, thread_id: int) -> None:
        if self.closed:
            raise MarkerStateError("marker state already closed")
        if not 0 <= thread_id < self.num_threads:
            raise MarkerArgumentError(f"thread id {thread_id} outside 0..{self.num_threads - 1}")

    def start_region(self, thread_id: int, core_id: int) -> None:
        self._check_thread(thread_id)
        if self._active[thread_id] is not None:
            raise MarkerOverlapError(
                f"thread {thread_id}: a region is already active; regions may not nest or overlap"
            )
        counts = dict(self.reader(core_id))
        self._active[thread_id] = _Snapshot(core_id, counts, self.clock())

    def stop_region(self, thread_id: int, core_id: int, region_id: int) -> None:
        self._check_thread(thread_id)
        if not 0 <= region_id < len(self.regions):
            raise MarkerArgumentError(f"region id {region_id} is not registered")
        snap = self._active[thread_id]
        if snap is None:
            raise MarkerStateError(f"thread {thread_id}: stop without a matching start")
        counts = self.reader(core_id)
        now = self.clock()
        acc = self._acc[thread_id].setdefault(region_id, _Accumulator())
        for ev, start_value in snap.counts.items():
            delta = wrap_delta(start_value, counts.get(ev, start_value), self.counter_width)
            acc.events[ev] = acc.events.get(ev, 0) + delta
        acc.cycles = acc.events.get(self.cycles_event, 0)
        acc.time_ns += now - snap.timestamp_ns
        acc.call_count += 1
        acc.core_id = core_id
        self._active[thread_id] = None

    def active_threads(self) -> list[int]:
        return [i for i, s in enumerate(self._active) if s is not None]

    def results(self) -> "MarkerResults":
        regions = []
        for rid, name in enumerate(self.regions):
            rows = []
            for tid in range(self.num_threads):
                acc = self._acc[tid].get(rid)
                if acc is None or acc.call_count == 0:
                    continue
                rows.append(ThreadRow(tid, acc.core_id, acc.call_count, dict(acc.events), acc.cycles, acc.time_ns))
            regions.append(RegionResult(name, rows))
        return MarkerResults(self.group, self.num_threads, regions)

    def close(self, path=None) -> "MarkerResults":
        active = self.active_threads()
        if active:
            raise MarkerStateError(f"cannot close: region still active on threads {active}")
        results = self.results()
        if path is not None:
            write_marker_file(path, results)
        self.closed = True
        return results


# --------------------------------------------------------------------------
# Result file

@dataclass
class ThreadRow:
    thread_id: int
    core_id: int
    call_count: int
    events: dict
    cycles: int
    time_ns: int


@dataclass
class RegionResult:
    name: str
    rows: list

    def per_core(self) -> dict:
        """core -> summed event counts over the threads that ran there."""
        out: dict = {}
        for row in self.rows:
            acc = out.setdefault(row.core_id, {})
            for ev, v in row.events.items():
                acc[ev] = acc.get(ev, 0) + v
        return dict(sorted(out.items()))


@dataclass
class MarkerResults:
    group: str
    num_threads: int
    regions: list

    def region(self, name: str) -> RegionResult:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)


def format_marker_file(results: MarkerResults) -> str:
    lines = [
        f"group {results.group}",
        f"threads {results.num_threads}",
        f"regions {len(results.regions)}",
    ]
    for region in results.regions:
        lines.append(f"region {region.name}")
        for row in region.rows:
            fields = [str(row.thread_id), str(row.core_id), str(row.call_count)]
            fields += [f"{ev}={v}" for ev, v in sorted(row.events.items())]
            fields += [f"cycles={row.cycles}", f"time_ns={row.time_ns}"]
            lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def write_marker_file(path, results: MarkerResults) -> None:
    """Write atomically: readers see the old file or the complete new one."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=".marker-", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(format_marker_file(results))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_marker_file(text: str) -> MarkerResults:
    lines = [ln for ln in text.splitlines() if ln.strip()]

    def header(i: int, key: str) -> str:
        if i >= len(lines) or not lines[i].startswith(key + " "):
            raise MarkerProtocolError(f"line {i + 1}: expected '{key} ...'")
        return lines[i][len(key) + 1:].strip()

    try:
        group = header(0, "group")
        num_threads = int(header(1, "threads"))
        num_regions = int(header(2, "regions"))
    except ValueError as exc:
        raise MarkerProtocolError(f"bad header: {exc}") from None
    regions: list[RegionResult] = []
    for lineno, line in enumerate(lines[3:], 4):
        if line.startswith("region "):
            regions.append(RegionResult(line[7:].strip(), []))
            continue
        if not regions:
            raise MarkerProtocolError(f"line {lineno}: row before any region")
        parts = line.split()
        try:
            tid, core, calls = int(parts[0]), int(parts[1]), int(parts[2])
            kv = dict(p.split("=", 1) for p in parts[3:])
            cycles = int(kv.pop("cycles"))
            time_ns = int(kv.pop("time_ns"))
            events = {k: int(v) for k, v in kv.items()}
        except (ValueError, IndexError, KeyError) as exc:
            raise MarkerProtocolError(f"line {lineno}: malformed row ({exc})") from None
        if calls < 1 or not 0 <= tid < num_threads:
            raise MarkerProtocolError(f"line {lineno}: invalid thread id or call count")
        regions[-1].rows.append(ThreadRow(tid, core, calls, events, cycles, time_ns))
    if len(regions) != num_regions:
        raise MarkerProtocolError(f"header announces {num_regions} regions, found {len(regions)}")
    return MarkerResults(group, num_threads, regions)


def read_marker_file(path) -> MarkerResults:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MarkerProtocolError(f"cannot read marker results {path}: {exc.strerror}") from None
    return parse_marker_file(text)


# --------------------------------------------------------------------------
# Process-wide API driven by the environment the CLI sets up

_state: MarkerState | None = None
_backend = None


def get_processor_id() -> int:
    """CPU the calling thread currently runs on."""
    from .pin.osapi import current_cpu

    return current_cpu()


def _env_reader():
    from .counters.backends import backend_from_env

    specs = parse_event_list(os.environ[EVENTS_ENV])
    cpus = [int(c) for c in os.environ[CPUS_ENV].split(",")]
    programming = {cpu: {s.counter: s.event for s in specs} for cpu in cpus}
    backend = backend_from_env(step_reads=True)
    backend.open(cpus, programming)
    backend.start()

    def reader(core_id: int) -> dict:
        snap = backend.read()
        return {ev: v for (cpu, ev), v in snap.values.items() if cpu == core_id}

    return backend, reader, backend.profile().counter_width


def init(num_threads: int, num_regions: int) -> MarkerState:
    """Set up process-wide marker state from the CLI-provided environment."""
    global _state, _backend
    if EVENTS_ENV not in os.environ or FILE_ENV not in os.environ:
        raise MarkerProtocolError(
            f"{FILE_ENV}/{EVENTS_ENV} not set; run the program under 'nodeperf perfctr -m'"
        )
    _backend, reader, width = _env_reader()
    clock = _backend.now_ns if hasattr(_backend, "now_ns") else time.monotonic_ns
    _state = MarkerState(
        num_threads, num_regions, reader,
        group=os.environ.get(GROUP_ENV, "custom"), clock=clock, counter_width=width,
    )
    return _state


def _require() -> MarkerState:
    if _state is None:
        raise MarkerStateError("marker API not initialized")
    return _state


def register_region(name: str) -> int:
    return _require().register_region(name)


def start_region(thread_id: int, core_id: int) -> None:
    _require().start_region(thread_id, core_id)


def stop_region(thread_id: int, core_id: int, region_id: int) -> None:
    _require().stop_region(thread_id, core_id, region_id)


def close() -> MarkerResults:
    global _state, _backend
    state = _require()
    results = state.close(os.environ[FILE_ENV])
    if _backend is not None:
        _backend.stop()
        _backend.close()
    _state = _backend = None
    return results
