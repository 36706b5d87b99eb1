"""Benchmark driver: one pinned worker thread per CPU, data initialization
under a chosen placement policy, and a barrier-synchronized timed region.

Traffic accounting counts explicit loads and stores only. A store miss
usually also reads the target line first (write-allocate), so real memory
traffic of ``copy`` is 24 rather than 16 bytes per iteration; counter-based
bandwidth from the MEM group shows the difference.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..domain import resolve_text
from ..pin.osapi import apply_affinity, apply_memory_policy
from ..pin.plan import MemoryPolicy
from ..topology import TopologyMap
from . import kernels

__all__ = [
    "INIT_POLICIES",
    "KERNELS",
    "BenchError",
    "BenchResult",
    "KernelDef",
    "PlacementRecorder",
    "VerificationError",
    "WorkloadSpec",
    "bandwidth_mbytes",
    "list_kernels",
    "mflops",
    "run_benchmark",
    "verify_result",
]

TRIAD_SCALAR = 3.0
INIT_VALUES = {"a": 0.0, "b": 1.0, "c": 2.0}
INIT_POLICIES = ("parallelFirstTouch", "serialOneThread", "interleaved")


class BenchError(RuntimeError):
    pass


class VerificationError(BenchError):
    def __init__(self, kernel: str, index: int, got: float, expected: float):
        self.index = index
        super().__init__(f"{kernel}: wrong result at index {index}: got {got!r}, expected {expected!r}")


@dataclass(frozen=True)
class KernelDef:
    name: str
    array_count: int
    loads: int
    stores: int
    flops_per_iter: int
    body: str

    @property
    def bytes_per_iter(self) -> int:
        return 8 * (self.loads + self.stores)


KERNELS = {
    "copy": KernelDef("copy", 2, 1, 1, 0, "a[i] = b[i]"),
    "triad": KernelDef("triad", 3, 2, 1, 2, "a[i] = b[i] + s * c[i]"),
}


def list_kernels() -> list[KernelDef]:
    return [KERNELS[k] for k in sorted(KERNELS)]


@dataclass(frozen=True)
class WorkloadSpec:
    kernel: str
    elements: int
    iterations: int
    thread_expr: str
    init_policy: str = "parallelFirstTouch"

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise BenchError(f"unknown kernel {self.kernel!r}; available: {', '.join(sorted(KERNELS))}")
        if self.elements < 1:
            raise BenchError("need at least one element per array")
        if self.iterations < 1:
            raise BenchError("iterations must be >= 1")
        if self.init_policy not in INIT_POLICIES:
            raise BenchError(f"unknown init policy {self.init_policy!r}; choose from {', '.join(INIT_POLICIES)}")

    @property
    def kernel_def(self) -> KernelDef:
        return KERNELS[self.kernel]

    @property
    def working_set_bytes(self) -> int:
        return self.elements * self.kernel_def.array_count * 8


def bandwidth_mbytes(spec: WorkloadSpec, wall_seconds: float) -> float:
    return 1e-6 * spec.iterations * spec.elements * spec.kernel_def.bytes_per_iter / wall_seconds


def mflops(spec: WorkloadSpec, wall_seconds: float) -> float:
    return 1e-6 * spec.iterations * spec.elements * spec.kernel_def.flops_per_iter / wall_seconds


@dataclass
class BenchResult:
    spec: WorkloadSpec
    cpus: tuple
    wall_seconds: float
    bandwidth_mbytes_per_sec: float
    mflops_per_sec: float
    per_thread_seconds: list = field(default_factory=list)
    kernel_backend: str = kernels.BACKEND

    @classmethod
    def from_timing(cls, spec, cpus, wall, per_thread):
        return cls(spec, tuple(cpus), wall, bandwidth_mbytes(spec, wall), mflops(spec, wall), list(per_thread))

    def csv_line(self) -> str:
        return (
            f"{self.spec.kernel},{self.spec.elements},{self.spec.iterations},{len(self.cpus)},"
            f"{self.wall_seconds:.6g},{self.bandwidth_mbytes_per_sec:.6g},{self.mflops_per_sec:.6g}"
        )


class PlacementRecorder:
    """Stands in for the kernel's page allocator: records the NUMA domain each
    page would land on, given who touches it first and the active policy."""

    def __init__(self, topo: TopologyMap, page_bytes: int = 4096):
        self.topo = topo
        self.page_elems = max(1, page_bytes // 8)
        self.pages: dict = {}  # (array, page) -> domain
        self._interleave_next = 0
        self._lock = threading.Lock()

    def touch(self, array: str, lo: int, hi: int, os_id: int, policy: MemoryPolicy) -> None:
        if hi <= lo:
            return
        first, last = lo // self.page_elems, (hi - 1) // self.page_elems
        with self._lock:
            for page in range(first, last + 1):
                if (array, page) in self.pages:
                    continue
                if policy.kind == "interleave":
                    domain = policy.domains[self._interleave_next % len(policy.domains)]
                    self._interleave_next += 1
                else:
                    domain = self.topo.thread(os_id).numa_id
                self.pages[(array, page)] = domain

    def histogram(self) -> dict:
        out: dict = {}
        for domain in self.pages.values():
            out[domain] = out.get(domain, 0) + 1
        return dict(sorted(out.items()))


def _chunks(n: int, parts: int) -> list[tuple[int, int]]:
    step = n // parts
    bounds = [(i * step, (i + 1) * step) for i in range(parts)]
    bounds[-1] = (bounds[-1][0], n)
    return bounds


def _check_memory(spec: WorkloadSpec) -> None:
    try:
        total = os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError):
        return
    if spec.working_set_bytes > total:
        raise BenchError(f"working set of {spec.working_set_bytes} bytes exceeds physical memory")


def run_benchmark(
    spec: WorkloadSpec,
    topo: TopologyMap,
    *,
    pin: Callable[[int], None] | None = apply_affinity,
    set_policy: Callable[[MemoryPolicy], None] | None = apply_memory_policy,
    recorder: PlacementRecorder | None = None,
    verify: bool = True,
) -> BenchResult:
    """Run ``spec`` with one worker per CPU of ``spec.thread_expr``.

    ``pin`` and ``set_policy`` apply affinity and memory policy from inside
    each worker; pass ``None`` to skip them (e.g. for fixture topologies).
    """
    cpus = list(resolve_text(spec.thread_expr, topo))
    _check_memory(spec)
    kdef = spec.kernel_def
    names = "abc"[: kdef.array_count]
    try:
        arrays = {name: np.empty(spec.elements, dtype=np.float64) for name in names}
    except MemoryError as exc:
        raise BenchError(f"cannot allocate {spec.working_set_bytes} bytes") from exc

    nthreads = len(cpus)
    chunks = _chunks(spec.elements, nthreads)
    interleave = MemoryPolicy("interleave", tuple(sorted({topo.thread(c).numa_id for c in cpus})))
    barrier = threading.Barrier(nthreads)
    starts = [0.0] * nthreads
    stops = [0.0] * nthreads
    errors: list = [None] * nthreads

    def init(idx: int, cpu: int) -> None:
        policy = MemoryPolicy()
        if spec.init_policy == "parallelFirstTouch":
            regions = [chunks[idx]]
        elif idx == 0:
            regions = [(0, spec.elements)]
            if spec.init_policy == "interleaved":
                policy = interleave
        else:
            regions = []
        if policy.kind != "default" and set_policy is not None:
            set_policy(policy)
        for lo, hi in regions:
            for name in names:
                kernels.fill(arrays[name], INIT_VALUES[name], lo, hi)
                if recorder is not None:
                    recorder.touch(name, lo, hi, cpu, policy)
        if policy.kind != "default" and set_policy is not None:
            set_policy(MemoryPolicy())

    def run(lo: int, hi: int) -> None:
        if spec.kernel == "copy":
            kernels.copy(arrays["a"], arrays["b"], lo, hi, spec.iterations)
        else:
            kernels.triad(arrays["a"], arrays["b"], arrays["c"], TRIAD_SCALAR, lo, hi, spec.iterations)

    def worker(idx: int, cpu: int) -> None:
        try:
            if pin is not None:
                pin(cpu)
            init(idx, cpu)
            barrier.wait()
            starts[idx] = time.perf_counter()
            run(*chunks[idx])
            stops[idx] = time.perf_counter()
            barrier.wait()
        except threading.BrokenBarrierError:
            pass
        except BaseException as exc:  # noqa: BLE001
            errors[idx] = exc
            barrier.abort()

    threads = [threading.Thread(target=worker, args=(i, c), name=f"bench-{c}") for i, c in enumerate(cpus)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    failed = [e for e in errors if e is not None]
    if failed:
        raise failed[0]

    wall = max(stops) - min(starts)
    if wall <= 0:
        wall = time.get_clock_info("perf_counter").resolution
    result = BenchResult.from_timing(spec, cpus, wall, [b - a for a, b in zip(starts, stops)])
    if verify:
        verify_result(spec.kernel, arrays)
    return result


def verify_result(kernel: str, arrays: dict, samples: int = 4096, scalar: float = TRIAD_SCALAR) -> bool:
    """Spot-check the output array against the kernel definition.

    Raises :class:`VerificationError` naming the first bad sampled index.
    """
    a = arrays["a"]
    n = len(a)
    idx = np.unique(np.linspace(0, n - 1, num=min(samples, n)).astype(np.int64))
    if kernel == "copy":
        expected = arrays["b"][idx]
    elif kernel == "triad":
        expected = arrays["b"][idx] + scalar * arrays["c"][idx]
    else:
        raise BenchError(f"unknown kernel {kernel!r}")
    got = a[idx]
    bad = np.nonzero(got != expected)[0]
    if bad.size:
        i = int(bad[0])
        raise VerificationError(kernel, int(idx[i]), float(got[i]), float(expected[i]))
    return True
