"""Node topology model: hardware threads, cores, sockets, LLC groups,
NUMA domains and caches.

A :class:`TopologyMap` is built either by probing the running Linux host
(:func:`probe_system_topology`) or from a topology document
(:func:`load_synthetic_topology`), which is how the test suite describes
machines it does not run on.

Within every thread domain (``N``, ``S<k>``, ``C<k>``, ``M<k>``) threads are
numbered in canonical order: all physical threads (SMT rank 0) first,
ordered by core id, then the SMT siblings, again ordered by core id.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import yaml

__all__ = [
    "CacheDescriptor",
    "HwThread",
    "NumaDomain",
    "ProbeError",
    "TopologyError",
    "TopologyMap",
    "UnknownDomainError",
    "dump_topology",
    "enumerate_domain",
    "load_synthetic_topology",
    "load_topology_file",
    "probe_system_topology",
    "render_topology",
    "topology_from_env",
]

SYSFS_CPU = Path("/sys/devices/system/cpu")
SYSFS_NODE = Path("/sys/devices/system/node")

CLOCK_ENV = "NODEPERF_CLOCK_HZ"
TOPOLOGY_ENV = "NODEPERF_TOPOLOGY"


class TopologyError(ValueError):
    """A topology document or map violates the model's invariants."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class ProbeError(RuntimeError):
    """Host metadata required for probing is missing."""

    def __init__(self, item: str, message: str = "not available"):
        self.item = item
        super().__init__(f"cannot probe topology: {item}: {message}")


class UnknownDomainError(LookupError):
    pass


@dataclass(frozen=True)
class HwThread:
    os_id: int
    core_id: int
    smt_rank: int
    socket_id: int
    numa_id: int
    llc_id: int


@dataclass(frozen=True)
class CacheDescriptor:
    level: int
    kind: str
    size_bytes: int
    line_size_bytes: int
    associativity: int
    shared_by_threads: int


@dataclass(frozen=True)
class NumaDomain:
    id: int
    memory_total_bytes: int
    memory_free_bytes: int
    os_ids: tuple[int, ...]


@dataclass(frozen=True)
class TopologyMap:
    threads: tuple[HwThread, ...]
    caches: tuple[CacheDescriptor, ...]
    numa_domains: tuple[NumaDomain, ...]
    nominal_clock_hz: float
    _by_os: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_os", {t.os_id: t for t in self.threads})

    @property
    def socket_count(self) -> int:
        return len({t.socket_id for t in self.threads})

    @property
    def llc_count(self) -> int:
        return len({t.llc_id for t in self.threads})

    @property
    def numa_count(self) -> int:
        return len(self.numa_domains)

    @property
    def threads_per_core(self) -> int:
        return max(t.smt_rank for t in self.threads) + 1

    @property
    def cores_per_socket(self) -> int:
        return len({t.core_id for t in self.threads}) // self.socket_count

    @property
    def os_ids(self) -> list[int]:
        return sorted(self._by_os)

    def thread(self, os_id: int) -> HwThread:
        try:
            return self._by_os[os_id]
        except KeyError:
            raise UnknownDomainError(f"no hardware thread with OS id {os_id}") from None

    def line_size(self) -> int:
        """Line size of the last-level cache (bytes)."""
        if not self.caches:
            return 64
        return max(self.caches, key=lambda c: c.level).line_size_bytes


# --------------------------------------------------------------------------
# Topology documents

_TOP_FIELDS = {"clock_hz", "threads", "caches", "numa"}
_THREAD_FIELDS = ("os_id", "core", "smt", "socket", "numa", "llc")
_CACHE_FIELDS = ("level", "kind", "size", "line", "assoc", "shared_by")
_NUMA_FIELDS = ("id", "mem_total", "mem_free")
_CACHE_KINDS = ("data", "instruction", "unified")


def _check_fields(where: str, entry: Any, allowed: Iterable[str], required: Iterable[str]):
    if not isinstance(entry, dict):
        raise TopologyError(where, "expected a mapping")
    unknown = set(entry) - set(allowed)
    if unknown:
        raise TopologyError(f"{where}.{sorted(unknown)[0]}", "unknown field")
    for name in required:
        if name not in entry:
            raise TopologyError(f"{where}.{name}", "missing field")


def _int(where: str, value: Any, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TopologyError(where, f"expected an integer, got {value!r}")
    if value < minimum:
        raise TopologyError(where, f"must be >= {minimum}, got {value}")
    return value


def _contiguous(where: str, ids: set[int]):
    if ids != set(range(len(ids))):
        raise TopologyError(where, f"ids must be contiguous from 0, got {sorted(ids)}")


def load_synthetic_topology(document: dict) -> TopologyMap:
    """Build a :class:`TopologyMap` from a topology document.

    Raises :class:`TopologyError` naming the offending field on any
    malformed entry or invariant violation.
    """
    _check_fields("topology", document, _TOP_FIELDS, ("clock_hz", "threads", "numa"))
    clock = document["clock_hz"]
    if isinstance(clock, bool) or not isinstance(clock, (int, float)) or not clock > 0:
        raise TopologyError("clock_hz", f"must be a positive number, got {clock!r}")

    raw_threads = document["threads"]
    if not isinstance(raw_threads, list) or not raw_threads:
        raise TopologyError("threads", "expected a nonempty list")
    threads = []
    for i, entry in enumerate(raw_threads):
        where = f"threads[{i}]"
        _check_fields(where, entry, _THREAD_FIELDS, _THREAD_FIELDS)
        threads.append(HwThread(*(_int(f"{where}.{k}", entry[k]) for k in _THREAD_FIELDS)))

    seen: dict[int, int] = {}
    for i, t in enumerate(threads):
        if t.os_id in seen:
            raise TopologyError(f"threads[{i}].os_id", f"duplicate OS id {t.os_id}")
        seen[t.os_id] = i

    cores: dict[int, list[HwThread]] = {}
    for t in threads:
        cores.setdefault(t.core_id, []).append(t)
    for core_id, members in cores.items():
        first = members[0]
        for t in members[1:]:
            for name, attr in (("socket", "socket_id"), ("numa", "numa_id"), ("llc", "llc_id")):
                if getattr(t, attr) != getattr(first, attr):
                    raise TopologyError(
                        f"threads[{seen[t.os_id]}].{name}",
                        f"core {core_id} spans several {name} ids",
                    )
        ranks = sorted(t.smt_rank for t in members)
        if ranks != list(range(len(members))):
            raise TopologyError(
                f"threads[{seen[members[0].os_id]}].smt",
                f"SMT ranks of core {core_id} must be 0..{len(members) - 1}, got {ranks}",
            )
    _contiguous("threads.socket", {t.socket_id for t in threads})
    _contiguous("threads.llc", {t.llc_id for t in threads})

    caches = []
    for i, entry in enumerate(document.get("caches") or []):
        where = f"caches[{i}]"
        _check_fields(where, entry, _CACHE_FIELDS, _CACHE_FIELDS)
        level = _int(f"{where}.level", entry["level"], 1)
        if level > 3:
            raise TopologyError(f"{where}.level", f"must be 1..3, got {level}")
        kind = entry["kind"]
        if kind not in _CACHE_KINDS:
            raise TopologyError(f"{where}.kind", f"must be one of {_CACHE_KINDS}, got {kind!r}")
        size = _int(f"{where}.size", entry["size"], 1)
        line = _int(f"{where}.line", entry["line"], 1)
        if size % line:
            raise TopologyError(f"{where}.line", f"line size {line} does not divide size {size}")
        caches.append(
            CacheDescriptor(
                level, kind, size, line,
                _int(f"{where}.assoc", entry["assoc"]),
                _int(f"{where}.shared_by", entry["shared_by"], 1),
            )
        )

    raw_numa = document["numa"]
    if not isinstance(raw_numa, list) or not raw_numa:
        raise TopologyError("numa", "expected a nonempty list")
    numa_ids = set()
    domains = []
    for i, entry in enumerate(raw_numa):
        where = f"numa[{i}]"
        _check_fields(where, entry, _NUMA_FIELDS, _NUMA_FIELDS)
        nid = _int(f"{where}.id", entry["id"])
        if nid in numa_ids:
            raise TopologyError(f"{where}.id", f"duplicate NUMA id {nid}")
        numa_ids.add(nid)
        members = tuple(sorted(t.os_id for t in threads if t.numa_id == nid))
        if not members:
            raise TopologyError(f"{where}.id", f"NUMA domain {nid} has no hardware threads")
        domains.append(
            NumaDomain(
                nid,
                _int(f"{where}.mem_total", entry["mem_total"]),
                _int(f"{where}.mem_free", entry["mem_free"]),
                members,
            )
        )
    _contiguous("numa.id", numa_ids)
    for i, t in enumerate(threads):
        if t.numa_id not in numa_ids:
            raise TopologyError(f"threads[{i}].numa", f"unknown NUMA domain {t.numa_id}")
    domains.sort(key=lambda d: d.id)

    return TopologyMap(tuple(threads), tuple(caches), tuple(domains), clock)


def dump_topology(topo: TopologyMap) -> dict:
    """Inverse of :func:`load_synthetic_topology`."""
    return {
        "clock_hz": topo.nominal_clock_hz,
        "threads": [
            dict(zip(_THREAD_FIELDS, (t.os_id, t.core_id, t.smt_rank, t.socket_id, t.numa_id, t.llc_id)))
            for t in topo.threads
        ],
        "caches": [
            dict(zip(_CACHE_FIELDS, (c.level, c.kind, c.size_bytes, c.line_size_bytes,
                                     c.associativity, c.shared_by_threads)))
            for c in topo.caches
        ],
        "numa": [
            {"id": d.id, "mem_total": d.memory_total_bytes, "mem_free": d.memory_free_bytes}
            for d in topo.numa_domains
        ],
    }


def load_topology_file(path) -> TopologyMap:
    with open(path) as fh:
        document = yaml.safe_load(fh)
    return load_synthetic_topology(document)


def topology_from_env() -> TopologyMap:
    """Topology named by ``NODEPERF_TOPOLOGY`` if set, else the probed host."""
    path = os.environ.get(TOPOLOGY_ENV)
    if path:
        return load_topology_file(path)
    return probe_system_topology()


# --------------------------------------------------------------------------
# Probing

def parse_cpu_list(text: str) -> list[int]:
    """Parse the kernel's ``0-3,8,10-11`` list format."""
    cpus: list[int] = []
    for part in text.strip().split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            cpus.extend(range(int(lo), int(hi) + 1))
        else:
            cpus.append(int(part))
    return cpus


def _read(path: Path) -> str:
    try:
        return path.read_text().strip()
    except OSError as exc:
        raise ProbeError(str(path), exc.strerror or "unreadable") from None


def _size_bytes(text: str) -> int:
    m = re.fullmatch(r"(\d+)\s*([KMG]?)", text.strip().upper())
    if not m:
        raise ValueError(text)
    return int(m.group(1)) << {"": 0, "K": 10, "M": 20, "G": 30}[m.group(2)]


def _probe_clock() -> float:
    override = os.environ.get(CLOCK_ENV)
    if override:
        return float(override)
    for name in ("base_frequency", "cpuinfo_max_freq"):
        p = SYSFS_CPU / "cpu0" / "cpufreq" / name
        if p.exists():
            return int(_read(p)) * 1e3
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("cpu MHz"):
                    return float(line.split(":")[1]) * 1e6
    except OSError:
        pass
    raise ProbeError("cpufreq/base_frequency, /proc/cpuinfo 'cpu MHz'",
                     f"no clock found; set {CLOCK_ENV}")


def _meminfo(path: Path) -> tuple[int, int]:
    total = free = 0
    for line in _read(path).splitlines():
        parts = line.split()
        if "MemTotal:" in parts:
            total = int(parts[parts.index("MemTotal:") + 1]) * 1024
        elif "MemFree:" in parts:
            free = int(parts[parts.index("MemFree:") + 1]) * 1024
    return total, free


def probe_system_topology(sysfs_cpu: Path = SYSFS_CPU, sysfs_node: Path = SYSFS_NODE) -> TopologyMap:
    """Read the topology of the running Linux host from sysfs (read-only)."""
    online = parse_cpu_list(_read(sysfs_cpu / "online"))

    raw = {}
    for cpu in online:
        top = sysfs_cpu / f"cpu{cpu}" / "topology"
        package = int(_read(top / "physical_package_id"))
        core = int(_read(top / "core_id"))
        sib_file = top / "thread_siblings_list"
        if not sib_file.exists():
            sib_file = top / "core_cpus_list"
        siblings = sorted(c for c in parse_cpu_list(_read(sib_file)) if c in online)
        raw[cpu] = (package, core, siblings.index(cpu) if cpu in siblings else 0)

    packages = {p: i for i, p in enumerate(sorted({v[0] for v in raw.values()}))}
    core_ids = {pc: i for i, pc in enumerate(sorted({(v[0], v[1]) for v in raw.values()}))}

    # Last-level cache groups and cache descriptors from cpu0's view.
    llc_of: dict[int, int] = {}
    caches = []
    cache_root = sysfs_cpu / f"cpu{online[0]}" / "cache"
    indices = sorted(cache_root.glob("index*")) if cache_root.exists() else []
    kinds = {"Data": "data", "Instruction": "instruction", "Unified": "unified"}
    llc_index = None
    for idx in indices:
        try:
            level = int(_read(idx / "level"))
            kind = kinds.get(_read(idx / "type"))
            if kind is None or level > 3:
                continue
            size = _size_bytes(_read(idx / "size"))
            line = int(_read(idx / "coherency_line_size"))
            assoc = int(_read(idx / "ways_of_associativity"))
            shared = [c for c in parse_cpu_list(_read(idx / "shared_cpu_list")) if c in online]
        except (ProbeError, ValueError):
            continue
        caches.append(CacheDescriptor(level, kind, size, line, assoc, max(1, len(shared))))
        if kind != "instruction" and (llc_index is None or level >= llc_index[0]):
            llc_index = (level, idx.name)
    groups: dict[tuple[int, ...], int] = {}
    for cpu in online:
        key: tuple[int, ...] = (raw[cpu][0],)
        if llc_index is not None:
            p = sysfs_cpu / f"cpu{cpu}" / "cache" / llc_index[1] / "shared_cpu_list"
            if p.exists():
                key = tuple(c for c in parse_cpu_list(_read(p)) if c in online)
        llc_of[cpu] = groups.setdefault(key, len(groups))

    # NUMA domains; a single synthesized domain when the host hides them.
    numa_of = {cpu: 0 for cpu in online}
    node_dirs = sorted(
        (d for d in sysfs_node.glob("node[0-9]*") if (d / "cpulist").exists()),
        key=lambda d: int(d.name[4:]),
    ) if sysfs_node.exists() else []
    domains = []
    nodes_with_cpus = []
    for d in node_dirs:
        cpus = [c for c in parse_cpu_list(_read(d / "cpulist")) if c in online]
        if cpus:
            nodes_with_cpus.append((d, cpus))
    if nodes_with_cpus:
        for new_id, (d, cpus) in enumerate(nodes_with_cpus):
            total, free = _meminfo(d / "meminfo") if (d / "meminfo").exists() else (0, 0)
            for c in cpus:
                numa_of[c] = new_id
            domains.append(NumaDomain(new_id, total, free, tuple(sorted(cpus))))
    else:
        total, free = _meminfo(Path("/proc/meminfo")) if Path("/proc/meminfo").exists() else (0, 0)
        domains.append(NumaDomain(0, total, free, tuple(sorted(online))))

    # llc groups must not straddle a core; derive from the core's first thread.
    threads = []
    for cpu in online:
        package, core, rank = raw[cpu]
        threads.append(
            HwThread(cpu, core_ids[(package, core)], rank, packages[package], numa_of[cpu], llc_of[cpu])
        )
    topo = TopologyMap(tuple(threads), tuple(caches), tuple(domains), _probe_clock())
    # Validate through the document path so probed maps obey the same invariants.
    return load_synthetic_topology(dump_topology(topo))


# --------------------------------------------------------------------------
# Domains

_TAG = re.compile(r"^(N|[SCM])(\d+)?$")


def _canonical(threads: Iterable[HwThread]) -> list[int]:
    return [t.os_id for t in sorted(threads, key=lambda t: (t.smt_rank, t.core_id))]


def domain_size(topo: TopologyMap, tag: str) -> int:
    return len(enumerate_domain(topo, tag))


def enumerate_domain(topo: TopologyMap, tag: str) -> list[int]:
    """OS ids of all threads in domain ``tag`` in canonical order."""
    m = _TAG.match(tag)
    if not m or (m.group(1) == "N") != (m.group(2) is None):
        raise UnknownDomainError(f"malformed domain tag {tag!r}")
    kind = m.group(1)
    if kind == "N":
        return _canonical(topo.threads)
    index = int(m.group(2))
    attr, count, label = {
        "S": ("socket_id", topo.socket_count, "socket"),
        "C": ("llc_id", topo.llc_count, "last-level cache group"),
        "M": ("numa_id", topo.numa_count, "NUMA domain"),
    }[kind]
    if index >= count:
        raise UnknownDomainError(f"{tag}: no {label} {index} (node has {count})")
    return _canonical(t for t in topo.threads if getattr(t, attr) == index)


# --------------------------------------------------------------------------
# Rendering

def _fmt_size(n: int) -> str:
    for unit, shift in (("GB", 30), ("MB", 20), ("kB", 10)):
        if n >= 1 << shift and n % (1 << shift) == 0:
            return f"{n >> shift} {unit}"
    return f"{n} B"


def _box(cells: list[str], width: int) -> list[str]:
    """Boxes side by side, each ``width`` wide, as three text rows."""
    top = " ".join("+" + "-" * (width - 2) + "+" for _ in cells)
    mid = " ".join("|" + c.center(width - 2) + "|" for c in cells)
    return [top, mid, top]


def render_topology(topo: TopologyMap) -> str:
    """Deterministic text report: summary, thread table, caches, NUMA, and
    one box diagram per socket."""
    out = []
    rule = "-" * 62
    out.append(rule)
    out.append(f"CPU clock:\t{topo.nominal_clock_hz / 1e9:.2f} GHz")
    out.append(rule)
    out.append(f"Sockets:\t{topo.socket_count}")
    out.append(f"Cores per socket:\t{topo.cores_per_socket}")
    out.append(f"Threads per core:\t{topo.threads_per_core}")
    out.append(rule)
    out.append("HWThread\tThread\tCore\tSocket\tNUMA\tLLC")
    for t in sorted(topo.threads, key=lambda t: t.os_id):
        out.append(f"{t.os_id}\t\t{t.smt_rank}\t{t.core_id}\t{t.socket_id}\t{t.numa_id}\t{t.llc_id}")
    out.append(rule)
    for s in range(topo.socket_count):
        out.append(f"Socket {s}: ( {' '.join(map(str, enumerate_domain(topo, f'S{s}')))} )")
    out.append(rule)
    for c in sorted(topo.caches, key=lambda c: (c.level, c.kind)):
        out.append(
            f"Level {c.level} {c.kind} cache:\t{_fmt_size(c.size_bytes)}, "
            f"{c.associativity}-way, {c.line_size_bytes} B lines, shared by {c.shared_by_threads} threads"
        )
    out.append(rule)
    for d in topo.numa_domains:
        out.append(
            f"NUMA domain {d.id}:\t{d.memory_total_bytes / 2**20:.1f} MB total, "
            f"{d.memory_free_bytes / 2**20:.1f} MB free, threads ( {' '.join(map(str, d.os_ids))} )"
        )
    out.append(rule)
    out.append("")
    out.extend(_render_sockets(topo))
    return "\n".join(out) + "\n"


def _render_sockets(topo: TopologyMap) -> list[str]:
    lines = []
    tpc = topo.threads_per_core
    for s in range(topo.socket_count):
        members = [t for t in topo.threads if t.socket_id == s]
        cores: dict[int, list[int]] = {}
        for t in sorted(members, key=lambda t: (t.core_id, t.smt_rank)):
            cores.setdefault(t.core_id, []).append(t.os_id)
        core_cells = [" ".join(map(str, ids)) for ids in cores.values()]
        labels = core_cells + [_fmt_size(c.size_bytes) for c in topo.caches if c.kind != "instruction"]
        width = max(len(c) for c in labels) + 4
        ncores = len(core_cells)
        inner = [*_box(core_cells, width)]
        for c in sorted(topo.caches, key=lambda c: (c.level, c.kind)):
            if c.kind == "instruction":
                continue
            per = max(1, min(ncores, -(-c.shared_by_threads // tpc)))
            label = _fmt_size(c.size_bytes)
            groups = -(-ncores // per)
            span = per * width + (per - 1)
            row = _box([label] * groups, span)
            inner.extend(row)
        total = max(len(r) for r in inner)
        lines.append(f"Socket {s}:")
        lines.append("+" + "-" * (total + 2) + "+")
        for r in inner:
            lines.append("| " + r.ljust(total) + " |")
        lines.append("+" + "-" * (total + 2) + "+")
    return lines
