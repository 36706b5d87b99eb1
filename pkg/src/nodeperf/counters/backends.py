"""Measurement backends.

Every backend implements ``open(cpus, programming)``, ``start()``,
``stop()``, ``read()`` and ``close()``, where ``programming`` maps each CPU
to its ``{counter: event}`` assignment and ``read()`` returns a
:class:`Snapshot` of raw monotonic counts.

Two implementations exist:

* :class:`ReplayBackend` plays back a recorded trace file and keeps a
  virtual clock, which makes every measurement mode deterministic.
* :class:`PerfEventBackend` counts on the live host through Linux
  ``perf_event_open``, one system-wide counter per (CPU, event). Nothing is
  filtered by process: everything running on a measured CPU is counted.

The backend is selected by ``NODEPERF_BACKEND`` (``perf`` or
``replay:<trace path>``).
"""

from __future__ import annotations

import csv
import ctypes
import ctypes.util
import errno
import os
import time
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

from .arch import ArchProfile, load_profile

__all__ = [
    "BACKEND_ENV",
    "BackendError",
    "PerfEventBackend",
    "ReplayBackend",
    "ReplayTrace",
    "Sample",
    "Snapshot",
    "backend_from_env",
    "load_trace",
    "write_trace",
]

BACKEND_ENV = "NODEPERF_BACKEND"


class BackendError(OSError):
    pass


class Sample(NamedTuple):
    os_id: int
    event: str
    value: int
    timestamp_ns: int


@dataclass(frozen=True)
class Snapshot:
    timestamp_ns: int
    values: dict  # (os_id, event) -> int

    def samples(self):
        for (cpu, ev), v in sorted(self.values.items()):
            yield Sample(cpu, ev, v, self.timestamp_ns)


# --------------------------------------------------------------------------
# Trace replay

@dataclass
class ReplayTrace:
    arch: str
    header: dict
    times: list  # distinct timestamps, ascending
    series: dict  # (os_id, event) -> (list of t_ns, list of values)

    @property
    def start_ns(self) -> int:
        return self.times[0]

    @property
    def end_ns(self) -> int:
        return self.times[-1]

    def value_at(self, key, t_ns: int) -> int:
        ts, vs = self.series[key]
        i = bisect_right(ts, t_ns)
        return vs[max(i - 1, 0)]

    def cpus(self) -> list[int]:
        return sorted({cpu for cpu, _ in self.series})

    def events(self) -> list[str]:
        return sorted({ev for _, ev in self.series})


def load_trace(path) -> ReplayTrace:
    """Read a replay trace.

    Format: ``# key: value`` header lines (``arch`` is required), then a CSV
    table with columns ``t_ns,os_id,event,value`` sorted by ``t_ns``.
    """
    header: dict[str, str] = {}
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise BackendError(exc.errno, f"cannot read trace {path}: {exc.strerror}") from None
    with fh:
        lines = []
        for lineno, line in enumerate(fh, 1):
            if line.startswith("#"):
                key, sep, value = line[1:].partition(":")
                if sep:
                    header[key.strip()] = value.strip()
                continue
            if line.strip():
                lines.append((lineno, line))
    if "arch" not in header:
        raise BackendError(errno.EINVAL, f"{path}: trace header lacks '# arch: <profile>'")
    reader = csv.reader(line for _, line in lines)
    columns = next(reader, None)
    if columns != ["t_ns", "os_id", "event", "value"]:
        raise BackendError(errno.EINVAL, f"{path}: expected columns t_ns,os_id,event,value")
    last_t = None
    for (lineno, _), row in zip(lines[1:], reader):
        try:
            t, cpu, ev, val = int(row[0]), int(row[1]), row[2].strip(), int(row[3])
        except (ValueError, IndexError):
            raise BackendError(errno.EINVAL, f"{path}:{lineno}: malformed row {row!r}") from None
        if last_t is not None and t < last_t:
            raise BackendError(errno.EINVAL, f"{path}:{lineno}: rows not sorted by t_ns")
        if val < 0:
            raise BackendError(errno.EINVAL, f"{path}:{lineno}: negative count")
        last_t = t
        rows.append((t, cpu, ev, val))
    if not rows:
        raise BackendError(errno.EINVAL, f"{path}: trace has no samples")
    series: dict = {}
    for t, cpu, ev, val in rows:
        ts, vs = series.setdefault((cpu, ev), ([], []))
        ts.append(t)
        vs.append(val)
    times = sorted({r[0] for r in rows})
    return ReplayTrace(header["arch"], header, times, series)


def write_trace(path, arch: str, samples, **header) -> None:
    """Write samples (``(t_ns, os_id, event, value)`` tuples) as a trace."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# arch: {arch}\n")
        for k, v in header.items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ns", "os_id", "event", "value"])
        for row in sorted(samples, key=lambda r: (r[0], r[1], r[2])):
            w.writerow(row)


class ReplayBackend:
    """Plays back a :class:`ReplayTrace` against a virtual clock.

    ``start()`` puts the clock at the first timestamp and ``stop()`` at the
    last, so a start/stop pair spans the whole trace. ``wait()`` advances the
    clock without passing the end. With ``step_reads=True`` each ``read()``
    returns the next distinct timestamp instead, which is how instrumented
    programs consume a trace one marker call at a time.
    """

    def __init__(self, trace, step_reads: bool = False):
        self.trace = trace if isinstance(trace, ReplayTrace) else load_trace(trace)
        self.step_reads = step_reads
        self.now = self.trace.start_ns
        self._step = 0
        self._programming = None
        self.running = False

    @property
    def arch(self) -> str:
        return self.trace.arch

    def profile(self) -> ArchProfile:
        return load_profile(self.trace.arch)

    def open(self, cpus, programming: dict) -> None:
        missing = [
            (cpu, ev) for cpu, counters in programming.items() for ev in counters.values()
            if (cpu, ev) not in self.trace.series
        ]
        if missing:
            cpu, ev = missing[0]
            raise BackendError(errno.ENOENT, f"trace has no series for event {ev} on CPU {cpu}")
        self._programming = programming

    def start(self) -> None:
        self.now = self.trace.start_ns
        self.running = True

    def stop(self) -> None:
        if not self.step_reads:
            self.now = self.trace.end_ns
        self.running = False

    def close(self) -> None:
        self._programming = None

    def now_ns(self) -> int:
        return self.now

    @property
    def exhausted(self) -> bool:
        return self.now >= self.trace.end_ns

    def wait(self, seconds: float) -> None:
        self.now = min(self.now + round(seconds * 1e9), self.trace.end_ns)

    def read(self) -> Snapshot:
        if self._programming is None:
            raise BackendError(errno.EBADF, "backend not open")
        if self.step_reads:
            if self._step >= len(self.trace.times):
                raise BackendError(errno.ENODATA, "replay trace exhausted")
            self.now = self.trace.times[self._step]
            self._step += 1
        values = {
            (cpu, ev): self.trace.value_at((cpu, ev), self.now)
            for cpu, counters in self._programming.items() for ev in counters.values()
        }
        return Snapshot(self.now, values)


# --------------------------------------------------------------------------
# Linux perf_event_open

PERF_EVENT_IOC_ENABLE = 0x2400
PERF_EVENT_IOC_DISABLE = 0x2401
PERF_EVENT_IOC_RESET = 0x2403
_SYS_PERF_EVENT_OPEN = {"x86_64": 298, "aarch64": 241, "ppc64le": 319, "s390x": 331}


class _PerfEventAttr(ctypes.Structure):
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
        ("config2", ctypes.c_uint64),
        ("branch_sample_type", ctypes.c_uint64),
        ("sample_regs_user", ctypes.c_uint64),
        ("sample_stack_user", ctypes.c_uint32),
        ("clockid", ctypes.c_int32),
        ("sample_regs_intr", ctypes.c_uint64),
        ("aux_watermark", ctypes.c_uint32),
        ("sample_max_stack", ctypes.c_uint16),
        ("reserved_2", ctypes.c_uint16),
    ]


_FLAG_DISABLED = 1 << 0
_FLAG_EXCLUDE_KERNEL = 1 << 5
_FLAG_EXCLUDE_HV = 1 << 6


class PerfEventBackend:
    """Per-CPU, system-wide counting via ``perf_event_open``.

    Event encodings come from the catalog payload (``type``/``config``; a
    bare ``config`` is a raw PMU event). With ``pid`` given, counting is
    restricted to that task instead of the whole CPU, which is what the
    marker library uses when the kernel forbids system-wide counting.
    """

    def __init__(self, profile: ArchProfile, pid: int = -1):
        self._profile = profile
        self.pid = pid
        self.fds: dict = {}
        self._libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
        machine = os.uname().machine
        if machine not in _SYS_PERF_EVENT_OPEN:
            raise BackendError(errno.ENOSYS, f"perf_event_open number unknown for {machine}")
        self._nr = _SYS_PERF_EVENT_OPEN[machine]

    def profile(self) -> ArchProfile:
        return self._profile

    def _encoding(self, event: str) -> tuple[int, int]:
        entry = self._profile.catalog.get(event)
        if entry is None or "config" not in entry.payload:
            raise BackendError(errno.EINVAL, f"event {event} has no perf encoding in {self._profile.name}")
        return int(entry.payload.get("type", 4)), int(entry.payload["config"])

    def open(self, cpus, programming: dict) -> None:
        try:
            for cpu, counters in programming.items():
                for event in counters.values():
                    etype, config = self._encoding(event)
                    attr = _PerfEventAttr()
                    attr.type = etype
                    attr.size = ctypes.sizeof(_PerfEventAttr)
                    attr.config = config
                    attr.flags = _FLAG_DISABLED | _FLAG_EXCLUDE_HV
                    if self.pid != -1:
                        attr.flags |= _FLAG_EXCLUDE_KERNEL
                    fd = self._libc.syscall(
                        self._nr, ctypes.byref(attr), self.pid, cpu if self.pid == -1 else -1, -1, 0
                    )
                    if fd < 0:
                        err = ctypes.get_errno()
                        raise BackendError(
                            err, f"perf_event_open({event}, cpu {cpu}): {os.strerror(err)}"
                        )
                    self.fds[(cpu, event)] = fd
        except BackendError:
            self.close()
            raise

    def _ioctl_all(self, request: int) -> None:
        for fd in self.fds.values():
            if self._libc.ioctl(fd, request, 0) < 0:
                err = ctypes.get_errno()
                raise BackendError(err, f"perf ioctl failed: {os.strerror(err)}")

    def start(self) -> None:
        self._ioctl_all(PERF_EVENT_IOC_RESET)
        self._ioctl_all(PERF_EVENT_IOC_ENABLE)

    def stop(self) -> None:
        self._ioctl_all(PERF_EVENT_IOC_DISABLE)

    def read(self) -> Snapshot:
        values = {}
        now = time.monotonic_ns()
        for key, fd in self.fds.items():
            try:
                raw = os.read(fd, 8)
            except OSError as exc:
                raise BackendError(exc.errno, f"reading {key[1]} on CPU {key[0]}: {exc.strerror}") from None
            values[key] = int.from_bytes(raw, "little")
        return Snapshot(now, values)

    def close(self) -> None:
        for fd in self.fds.values():
            try:
                os.close(fd)
            except OSError:
                pass
        self.fds = {}

    def now_ns(self) -> int:
        return time.monotonic_ns()

    exhausted = False

    def wait(self, seconds: float) -> None:
        time.sleep(seconds)


def backend_from_env(env=None, *, step_reads: bool = False, arch: str | None = None):
    """Backend named by ``NODEPERF_BACKEND``; defaults to ``perf``."""
    env = os.environ if env is None else env
    spec = env.get(BACKEND_ENV, "perf")
    if spec.startswith("replay:"):
        path = Path(spec[len("replay:"):])
        return ReplayBackend(path, step_reads=step_reads)
    if spec == "perf":
        return PerfEventBackend(load_profile(arch or env.get("NODEPERF_ARCH", "perf")))
    raise BackendError(errno.EINVAL, f"unknown backend {spec!r} in {BACKEND_ENV}")
