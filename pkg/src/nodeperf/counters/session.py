"""Event requests, counter allocation, socket locks and delta readout."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from ..topology import TopologyMap
from .arch import ArchProfile

__all__ = [
    "AllocationError",
    "CapacityError",
    "CatalogError",
    "ClassError",
    "ConflictError",
    "Deltas",
    "EventParseError",
    "EventSpec",
    "MeasurementSession",
    "SessionStateError",
    "allocate_counters",
    "apply_socket_lock",
    "parse_event_list",
    "wrap_delta",
]



class EventParseError(ValueError):
    pass


class AllocationError(ValueError):
    pass


class CapacityError(AllocationError):
    pass


class ConflictError(AllocationError):
    pass


class CatalogError(AllocationError):
    pass


class ClassError(AllocationError):
    pass


class SessionStateError(RuntimeError):
    pass


class EventSpec(NamedTuple):
    event: str
    counter: str

    def __str__(self):
        return f"{self.event}:{self.counter}"


_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def parse_event_list(text: str) -> list[EventSpec]:
    """Parse ``EVENT:COUNTER[,EVENT:COUNTER...]``."""
    specs = []
    for i, item in enumerate(text.split(",")):
        event, sep, counter = item.partition(":")
        if not sep:
            raise EventParseError(f"item {i} {item!r}: expected EVENT:COUNTER")
        event, counter = event.strip(), counter.strip()
        if not event or not counter:
            raise EventParseError(f"item {i} {item!r}: empty event or counter name")
        if ":" in counter:
            raise EventParseError(f"item {i} {item!r}: too many ':'")
        if not (_NAME.match(event) and _NAME.match(counter)):
            raise EventParseError(f"item {i} {item!r}: names are letters, digits, '_' and '.'")
        specs.append(EventSpec(event, counter))
    return specs


def wrap_delta(previous: int, current: int, width: int) -> int:
    """Difference of two readings of a ``width``-bit counter, allowing one wrap."""
    if current >= previous:
        return current - previous
    return (1 << width) - previous + current


class Deltas(NamedTuple):
    counts: dict  # (os_id, event) -> int
    seconds: float
    timestamp_ns: int

    def for_cpu(self, cpu: int) -> dict:
        return {ev: v for (c, ev), v in self.counts.items() if c == cpu}


@dataclass
class MeasurementSession:
    """Counter assignments for a set of CPUs.

    ``assignments`` maps counter name to event and is identical on every
    measured CPU; uncore events are only read on the CPU holding the socket
    lock and report zero elsewhere.
    """

    profile: ArchProfile
    assignments: dict
    cpus: tuple = ()
    socket_locks: dict = field(default_factory=dict)  # event -> {socket: os_id}
    state: str = "created"
    _backend: object = field(default=None, repr=False)
    _previous: dict = field(default=None, repr=False)
    _previous_ns: int = field(default=0, repr=False)
    _first: dict = field(default=None, repr=False)
    _first_ns: int = field(default=0, repr=False)

    @property
    def events(self) -> list[str]:
        return list(self.assignments.values())

    @property
    def uncore_events(self) -> list[str]:
        return [ev for c, ev in self.assignments.items() if self.profile.counter_class(c) == "uncore"]

    def attach(self, cpus: Iterable[int], topo: TopologyMap) -> "MeasurementSession":
        self.cpus = tuple(cpus)
        self.socket_locks = apply_socket_lock(self.cpus, topo, self)
        return self

    def counters_for(self, cpu: int) -> dict:
        """counter -> event actually programmed on ``cpu``."""
        owned = {ev for ev, per in self.socket_locks.items() if cpu in per.values()}
        return {
            c: ev for c, ev in self.assignments.items()
            if self.profile.counter_class(c) != "uncore" or ev in owned
        }

    def start(self, backend) -> None:
        if self.state == "running":
            raise SessionStateError("session already running")
        if not self.cpus:
            raise SessionStateError("session has no CPUs attached")
        backend.open(self.cpus, {cpu: self.counters_for(cpu) for cpu in self.cpus})
        backend.start()
        self._backend = backend
        snap = backend.read()
        self._previous = self._fill(snap.values)
        self._first = dict(self._previous)
        self._previous_ns = self._first_ns = snap.timestamp_ns
        self.state = "running"

    def _fill(self, values: dict) -> dict:
        out = {}
        for cpu in self.cpus:
            for ev in self.assignments.values():
                out[(cpu, ev)] = values.get((cpu, ev), 0)
        return out

    def read_deltas(self) -> Deltas:
        """Counts accumulated since the previous read (or start)."""
        if self.state != "running":
            raise SessionStateError(f"cannot read a session in state {self.state!r}")
        snap = self._backend.read()
        current = self._fill(snap.values)
        width = self.profile.counter_width
        counts = {key: wrap_delta(self._previous[key], current[key], width) for key in current}
        seconds = (snap.timestamp_ns - self._previous_ns) / 1e9
        self._previous, self._previous_ns = current, snap.timestamp_ns
        return Deltas(counts, seconds, snap.timestamp_ns)

    def stop(self) -> Deltas:
        """Stop counting; returns the final interval's deltas."""
        if self.state != "running":
            raise SessionStateError(f"cannot stop a session in state {self.state!r}")
        self._backend.stop()
        final = self.read_deltas()
        self._backend.close()
        self.state = "stopped"
        return final


def allocate_counters(specs: list[EventSpec], profile: ArchProfile) -> MeasurementSession:
    """Bind each requested event to its counter and add the fixed events."""
    # Anything not aimed at a fixed or uncore counter competes for the PMCs.
    general = [s for s in specs if profile.counter_class(s.counter) not in ("fixed", "uncore")]
    if len(general) > len(profile.general_counters):
        raise CapacityError(
            f"{len(general)} general-purpose events requested but {profile.name} "
            f"has only {len(profile.general_counters)} counters"
        )

    assignments: dict[str, str] = {}
    for spec in specs:
        cls = profile.counter_class(spec.counter)
        if cls is None:
            raise CatalogError(f"unknown counter {spec.counter!r} on {profile.name}")
        entry = profile.catalog.get(spec.event)
        if entry is None:
            raise CatalogError(f"unknown event {spec.event!r} on {profile.name}")
        if cls not in entry.classes:
            raise ClassError(
                f"event {spec.event} cannot be counted on {cls} counter {spec.counter}"
            )
        if cls == "fixed" and profile.fixed_counters[spec.counter] != spec.event:
            raise ClassError(
                f"fixed counter {spec.counter} is bound to {profile.fixed_counters[spec.counter]}"
            )
        if spec.counter in assignments:
            if assignments[spec.counter] == spec.event and cls == "fixed":
                continue
            raise ConflictError(
                f"counter {spec.counter} requested for both {assignments[spec.counter]} and {spec.event}"
            )
        if spec.event in assignments.values():
            raise ConflictError(f"event {spec.event} requested twice")
        assignments[spec.counter] = spec.event
    for counter, event in profile.fixed_counters.items():
        assignments.setdefault(counter, event)
    return MeasurementSession(profile, assignments)


def apply_socket_lock(cpus: Iterable[int], topo: TopologyMap, session_or_specs) -> dict:
    """For each uncore event, pick one CPU per socket: the first list member
    on that socket."""
    if isinstance(session_or_specs, MeasurementSession):
        uncore = session_or_specs.uncore_events
    else:
        profile, specs = session_or_specs
        uncore = [s.event for s in specs if profile.counter_class(s.counter) == "uncore"]
    owners: dict[int, int] = {}
    for cpu in cpus:
        owners.setdefault(topo.thread(cpu).socket_id, cpu)
    return {ev: dict(owners) for ev in uncore}
