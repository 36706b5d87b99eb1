"""Acceptance suite: one test group per criterion, each with its own
tolerance and wall-clock budget. The terminal summary prints one
PASS/FAIL/SKIP line per criterion (see conftest.py)."""

import io
import json
import random
import statistics
import time

import pytest

from nodeperf.bench import KERNELS, PlacementRecorder, WorkloadSpec, run_benchmark
from nodeperf.cli import RunConfig, run_timeline_mode, run_wrapper_mode
from nodeperf.counters import CapacityError, EventSpec, allocate_counters, apply_socket_lock, load_trace
from nodeperf.counters.arch import load_profile
from nodeperf.domain import CpuList, resolve_text
from nodeperf.marker import MarkerOverlapError, MarkerState, MarkerStateError
from nodeperf.metrics import eval_metrics, find_group
from nodeperf.pin import PinPlan, Pinned, Skipped, assign_on_create, build_plan
from nodeperf.tables import format_value
from nodeperf.topology import load_topology_file, probe_system_topology

from conftest import GOLDEN, TRACES, topo_path


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f} s, budget {self.seconds} s"


def criterion(n, title):
    return pytest.mark.criterion(n, title=title)


# ---------------------------------------------------------------------------
# 1. metrics on the published four-core listing

LISTING = {  # core: (INSTR_RETIRED_ANY, CPU_CLK_UNHALTED_CORE)
    0: (313742, 217578), 1: (376154, 504187), 2: (355430, 477785), 3: (341988, 459276),
}
CPI = {0: 0.693493, 1: 1.34037, 2: 1.34424, 3: 1.34296}
RUNTIME = {0: 7.67906e-05, 1: 0.000177945, 2: 0.000168626, 3: 0.000162094}
MFLOPS = {0: 0.0130224, 1: 0.00561973, 2: 0.00593027, 3: 0.00616926}


@criterion(1, "metric reproduction on the four-core FLOPS_DP listing")
def test_c1_metric_reproduction():
    with Budget(1.0):
        group = find_group("FLOPS_DP", load_profile("core2"))
        clock = load_topology_file(topo_path("core2quad")).nominal_clock_hz
        deltas = {}
        for core, (instr, cyc) in LISTING.items():
            deltas[(core, "INSTR_RETIRED_ANY")] = instr
            deltas[(core, "CPU_CLK_UNHALTED_CORE")] = cyc
            # one scalar instruction; matches the published MFlops/s rows
            deltas[(core, "SIMD_COMP_INST_RETIRED_PACKED_DOUBLE")] = 0
            deltas[(core, "SIMD_COMP_INST_RETIRED_SCALAR_DOUBLE")] = 1
        report = eval_metrics(group, deltas, clock, cpus=list(LISTING))
        for core in LISTING:
            v = report.values[core]
            assert v["CPI"] == pytest.approx(CPI[core], rel=1e-5)
            assert v["Runtime [s]"] == pytest.approx(RUNTIME[core], rel=1e-3)
            assert v["DP MFlops/s"] == pytest.approx(MFLOPS[core], rel=1e-3)


# ---------------------------------------------------------------------------
# 2. domain expressions against the oracle's golden lists

LISTED_STRINGS = ["M0:0,1@M2:0,1", "N:0-7", "S0:0", "S0:0@S1:0", "S0:0-3@S1:0-3"]


@criterion(2, "domain expressions match the enumeration oracle")
def test_c2_domain_expressions():
    with Budget(1.0):
        gold = json.loads((GOLDEN / "expressions.json").read_text())
        assert "M0:0,1@M2:0,1" in gold["numa4"]
        for s in LISTED_STRINGS[1:]:
            assert s in gold["westmere2x6x2"]
        checked = 0
        for fixture, table in gold.items():
            topo = load_topology_file(topo_path(fixture))
            for expr, want in table.items():
                if "os_ids" not in want:
                    continue
                assert list(resolve_text(expr, topo)) == want["os_ids"], expr
                checked += 1
        assert checked >= 20


# ---------------------------------------------------------------------------
# 3. timeline intervals add up to the whole-run counts


def _trace_cases():
    for path in sorted(TRACES.glob("*.csv")):
        for group in ("FLOPS_DP", "MEM"):
            yield pytest.param(path.name, group, id=f"{path.stem}-{group}")


@criterion(3, "timeline deltas telescope to whole-run deltas")
@pytest.mark.parametrize("trace,group", list(_trace_cases()))
def test_c3_telescoping(monkeypatch, trace, group):
    with Budget(5.0):
        tr = load_trace(TRACES / trace)
        monkeypatch.setenv("NODEPERF_BACKEND", f"replay:{TRACES / trace}")
        topo = str(topo_path(tr.header["topology"]))
        span_ms = (tr.end_ns - tr.start_ns) / 1e6
        interval = min(800.0, span_ms / 7)
        whole: dict = {}
        cfg = RunConfig(tr.header["cpus"], group=group, command=["true"], topology=topo)
        assert run_wrapper_mode(cfg, io.StringIO(), totals_out=whole) == 0
        records: list = []
        cfg = RunConfig(tr.header["cpus"], group=group, interval_ms=interval, command=["true"], topology=topo)
        assert run_timeline_mode(cfg, io.StringIO(), records=records) == 0
        summed: dict = {}
        stamps = set()
        for t, cpu, name, value in records:
            if (cpu, name) in whole:
                summed[(cpu, name)] = summed.get((cpu, name), 0) + value
                stamps.add(t)
        assert len(stamps) >= 5
        assert summed == whole
        assert any(v > 0 for v in whole.values())


# ---------------------------------------------------------------------------
# 4. marker state machine under random call sequences


def _random_sequence(rng):
    n = rng.randint(0, 30)
    return [(rng.choice(("start", "stop")), rng.randint(0, 2), rng.randint(0, 3)) for _ in range(n)]


def _check_sequence(ops, rng):
    counters = [0, 0, 0]
    steps = [[rng.randint(0, 1000) for _ in range(5)] for _ in range(3)]
    reads = [0, 0, 0]

    def reader(core):
        counters[core] += steps[core][reads[core] % 5]
        reads[core] += 1
        return {"CPU_CLK_UNHALTED_CORE": counters[core]}

    m = MarkerState(3, 4, reader)
    for r in range(4):
        m.register_region(f"R{r}")
    open_at: dict = {}
    expected: dict = {}
    for op, tid, rid in ops:
        core = tid
        if op == "start":
            if tid in open_at:
                with pytest.raises(MarkerOverlapError, match="nest or overlap"):
                    m.start_region(tid, core)
            else:
                m.start_region(tid, core)
                open_at[tid] = counters[core]
        else:
            if tid not in open_at:
                with pytest.raises(MarkerStateError, match="without a matching start"):
                    m.stop_region(tid, core, rid)
            else:
                m.stop_region(tid, core, rid)
                expected[(tid, rid)] = expected.get((tid, rid), 0) + counters[core] - open_at.pop(tid)
    got = {}
    for rid, region in enumerate(m.results().regions):
        for row in region.rows:
            got[(row.thread_id, rid)] = row.events["CPU_CLK_UNHALTED_CORE"]
    assert got == expected


@criterion(4, "marker state machine, 10^4 random sequences")
def test_c4_marker_state_machine():
    with Budget(10.0):
        rng = random.Random(20100913)
        for _ in range(10_000):
            _check_sequence(_random_sequence(rng), rng)


# ---------------------------------------------------------------------------
# 5. pin assignment against a brute-force creation walk


def _walk(cpus, mask, count):
    pinned = 0
    out = []
    for i in range(count):
        if (mask >> i) & 1:
            out.append(Skipped())
        else:
            pinned += 1
            pos = pinned % len(cpus)
            out.append(Pinned(cpus[pos], pos, pinned >= len(cpus)))
    return out


@criterion(5, "pin assignment equals brute-force simulation")
def test_c5_pin_assignment(westmere):
    with Budget(2.0):
        rng = random.Random(7)
        for _ in range(1000):
            cpus = rng.sample(range(64), rng.randint(1, 16))
            mask = rng.getrandbits(rng.randint(0, 24))
            count = rng.randint(0, 40)
            plan = PinPlan(CpuList(tuple(cpus)), mask)
            assert [assign_on_create(plan, i) for i in range(count)] == _walk(cpus, mask, count)
        intel = build_plan("N:0-3", westmere, "intel")
        decisions = [assign_on_create(intel, i) for i in range(6)]
        assert isinstance(decisions[0], Skipped)
        assert all(isinstance(d, Pinned) for d in decisions[1:])


# ---------------------------------------------------------------------------
# 6. counter allocation


@criterion(6, "counter capacity, fixed events and socket lock")
def test_c6_counter_allocation(westmere):
    with Budget(1.0):
        arch = load_profile("testarch")
        with pytest.raises(CapacityError, match="counters"):
            allocate_counters([EventSpec("EV_A", "PMC0"), EventSpec("EV_B", "PMC1"), EventSpec("EV_C", "PMC2")], arch)
        general = ["EV_A", "EV_B", "EV_C", "FP_PACKED_DOUBLE"]
        rng = random.Random(3)
        for _ in range(200):
            events = rng.sample(general, rng.randint(0, 2))
            specs = [EventSpec(e, f"PMC{i}") for i, e in enumerate(events)]
            if rng.random() < 0.5:
                specs.append(EventSpec("UNC_DRAM_LINES", "UPMC0"))
            session = allocate_counters(specs, arch)
            for fixed in arch.fixed_events:
                assert fixed in session.events
        session = allocate_counters([EventSpec("UNC_DRAM_LINES", "UPMC0")], arch)
        cpus = list(resolve_text("N", westmere))
        rng.shuffle(cpus)
        locks = apply_socket_lock(cpus, westmere, session)
        assert set(locks) == {"UNC_DRAM_LINES"}
        owners = locks["UNC_DRAM_LINES"]
        assert sorted(owners) == [0, 1]
        for socket, cpu in owners.items():
            assert cpu == next(c for c in cpus if westmere.thread(c).socket_id == socket)


# ---------------------------------------------------------------------------
# 7. NUMA case study

NUMA_TABLE = {
    "Runtime [s]": ("4.71567", "0.138517"),
    "CPI": ("16.4815", "0.605114"),
    "Memory bandwidth [MBytes/s]": ("6.9273", "6998.71"),
    "Remote Read BW [MBytes/s]": ("0.454106", "4589.46"),
    "Remote Write BW [MBytes/s]": ("0.0705132", "2289.32"),
    "Remote BW [MBytes/s]": ("0.524619", "6878.78"),
}


def _numa_report(monkeypatch):
    monkeypatch.setenv("NODEPERF_BACKEND", f"replay:{TRACES / 'nehalem_numa.csv'}")
    out = io.StringIO()
    cfg = RunConfig("S0:0@S1:0", group="MEM", command=["true"], topology=str(topo_path("nehalem2x4")))
    assert run_wrapper_mode(cfg, out) == 0
    rows = {}
    for line in out.getvalue().splitlines():
        cells = [c.strip() for c in line.strip("|").split("|")]
        if len(cells) == 3 and cells[0] in NUMA_TABLE:
            rows[cells[0]] = (cells[1], cells[2])
    return rows


@criterion(7, "NUMA case study: remote traffic dominates on the victim socket")
def test_c7_numa_shape(monkeypatch):
    with Budget(1.0):
        rows = _numa_report(monkeypatch)
        assert set(rows) == set(NUMA_TABLE)
        local_core0 = float(rows["Memory bandwidth [MBytes/s]"][0])
        remote_core4 = float(rows["Remote BW [MBytes/s]"][1])
        total_core4 = float(rows["Memory bandwidth [MBytes/s]"][1])
        assert remote_core4 > 500 * local_core0
        assert remote_core4 / total_core4 > 0.98


@criterion(7, "NUMA case study: remote traffic dominates on the victim socket")
@pytest.mark.parametrize("label", list(NUMA_TABLE))
def test_c7_numa_values(monkeypatch, label):
    with Budget(1.0):
        rows = _numa_report(monkeypatch)
        assert rows[label] == NUMA_TABLE[label]


# ---------------------------------------------------------------------------
# 8. benchmark arithmetic, verification and placement


@criterion(8, "bench arithmetic, verification and page placement")
def test_c8_bench(westmere, numa4):
    with Budget(10.0):
        rng = random.Random(11)
        for _ in range(12):
            kernel = rng.choice(sorted(KERNELS))
            n = rng.randint(1, 200_000)
            iters = rng.randint(1, 4)
            expr = rng.choice(["S0:0", "S0:0-1", "S0:0@S1:0", "N:0-5"])
            spec = WorkloadSpec(kernel, n, iters, expr, rng.choice(["parallelFirstTouch", "serialOneThread"]))
            r = run_benchmark(spec, westmere, pin=None, set_policy=None)  # verify=True raises on bad data
            kd = KERNELS[kernel]
            assert r.bandwidth_mbytes_per_sec == 1e-6 * iters * n * kd.bytes_per_iter / r.wall_seconds
            assert r.mflops_per_sec == 1e-6 * iters * n * kd.flops_per_iter / r.wall_seconds
        n = 512 * 16
        serial = PlacementRecorder(numa4)
        run_benchmark(WorkloadSpec("triad", n, 1, "M0:0@M1:0@M2:0@M3:0", "serialOneThread"), numa4,
                      pin=None, set_policy=None, recorder=serial)
        assert list(serial.histogram()) == [0]
        spread = PlacementRecorder(numa4)
        run_benchmark(WorkloadSpec("triad", n, 1, "M0:0@M1:0@M2:0@M3:0", "parallelFirstTouch"), numa4,
                      pin=None, set_policy=None, recorder=spread)
        hist = spread.histogram()
        assert sorted(hist) == [0, 1, 2, 3] and len(set(hist.values())) == 1


# ---------------------------------------------------------------------------
# 9. real ccNUMA host (opt-in)


def _host_numa():
    topo = probe_system_topology()
    if topo.numa_count < 2:
        pytest.skip("needs a host with at least two NUMA domains")
    return topo


def _best_bandwidth(topo, kernel, expr, init, runs=3):
    n = 20_000_000
    return max(
        run_benchmark(WorkloadSpec(kernel, n, 5, expr, init), topo).bandwidth_mbytes_per_sec for _ in range(runs)
    )


@pytest.mark.hardware
@criterion(9, "hardware: placement ordering and pinning variance")
@pytest.mark.parametrize("kernel", ["triad", "copy"])
def test_c9_placement_ordering(kernel):
    topo = _host_numa()
    expr = "@".join(f"M{d.id}" for d in topo.numa_domains)
    first = _best_bandwidth(topo, kernel, expr, "parallelFirstTouch")
    inter = _best_bandwidth(topo, kernel, expr, "interleaved")
    serial = _best_bandwidth(topo, kernel, expr, "serialOneThread")
    assert first > inter > serial


@pytest.mark.hardware
@criterion(9, "hardware: placement ordering and pinning variance")
def test_c9_pinning_reduces_variance():
    topo = _host_numa()
    expr = "@".join(f"M{d.id}" for d in topo.numa_domains)
    spec = WorkloadSpec("triad", 20_000_000, 5, expr, "parallelFirstTouch")
    pinned = [run_benchmark(spec, topo).bandwidth_mbytes_per_sec for _ in range(10)]
    free = [run_benchmark(spec, topo, pin=None).bandwidth_mbytes_per_sec for _ in range(10)]
    assert statistics.pvariance(pinned) < statistics.pvariance(free)


def test_value_formatting_matches_listing():
    # guards the comparison strings used by criterion 7
    assert format_value(0.0705132) == "0.0705132" and format_value(6998.71) == "6998.71"
