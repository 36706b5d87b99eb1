"""``nodeperf`` command line: topology, perfctr, pin and bench subcommands.

Exit codes: 0 on success; in wrapper and marker mode the measured program's
own exit code; otherwise one of the ``EXIT_*`` codes below.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field

import yaml

from . import marker as marker_api
from .bench import INIT_POLICIES, KERNELS, BenchError, WorkloadSpec, list_kernels, run_benchmark
from .bench.kernels import BACKEND as KERNEL_BACKEND
from .counters.arch import ArchProfile, ProfileError, load_profile
from .counters.backends import BackendError, ReplayBackend, backend_from_env
from .counters.session import AllocationError, EventParseError, SessionStateError, allocate_counters, parse_event_list
from .domain import ExprError, resolve_text
from .metrics import GroupLoadError, MetricEvalError, eval_metrics, find_group, list_groups
from .pin import PinError, ShimError, build_plan, child_setup, exec_pinned, pinned_env
from .tables import box_table, event_table, format_value, metric_table
from .topology import ProbeError, TopologyError, UnknownDomainError, dump_topology, load_topology_file, probe_system_topology, render_topology

__all__ = ["RunConfig", "main", "run_marker_mode", "run_timeline_mode", "run_wrapper_mode"]

log = logging.getLogger("nodeperf")

EXIT_USAGE = 2
EXIT_EXPR = 3
EXIT_ALLOC = 4
EXIT_PROTOCOL = 5
EXIT_BACKEND = 6
EXIT_TOPOLOGY = 7
EXIT_PIN = 8
EXIT_BENCH = 9
EXIT_LAUNCH = 127

RULE = "-" * 61
DUMP_MARK = "# topology document (YAML)\n"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    cpu_expr: str
    pin: bool = False
    group: str | None = None
    events: str | None = None
    marker: bool = False
    interval_ms: float | None = None
    model: str | None = None
    skip_mask: int | None = None
    command: list = field(default_factory=list)
    topology: str | None = None

    def __post_init__(self):
        if (self.group is None) == (self.events is None):
            raise CliError("give exactly one of a group name or a raw event list", EXIT_USAGE)
        if self.interval_ms is not None and self.interval_ms <= 0:
            raise CliError("timeline interval must be positive", EXIT_USAGE)


# --------------------------------------------------------------------------
# helpers

def _topology(path: str | None):
    try:
        path = path or os.environ.get("NODEPERF_TOPOLOGY")
        return load_topology_file(path) if path else probe_system_topology()
    except (TopologyError, ProbeError, OSError) as exc:
        raise CliError(str(exc), EXIT_TOPOLOGY) from None


def _cpus(expr: str, topo):
    try:
        return list(resolve_text(expr, topo))
    except (ExprError, UnknownDomainError) as exc:
        raise CliError(f"bad CPU expression: {exc}", EXIT_EXPR) from None


def _backend(step_reads=False):
    try:
        return backend_from_env(step_reads=step_reads)
    except (BackendError, ProfileError) as exc:
        raise CliError(str(exc), EXIT_BACKEND) from None


def _clock(backend, topo) -> float:
    if isinstance(backend, ReplayBackend) and "clock_hz" in backend.trace.header:
        return float(backend.trace.header["clock_hz"])
    return topo.nominal_clock_hz


def _measurement(config: RunConfig, profile: ArchProfile):
    """(group or None, session skeleton)."""
    try:
        if config.group is not None:
            group = find_group(config.group, profile)
            return group, allocate_counters(list(group.event_specs), profile)
        return None, allocate_counters(parse_event_list(config.events), profile)
    except (GroupLoadError, AllocationError, EventParseError) as exc:
        raise CliError(str(exc), EXIT_ALLOC) from None


def _child_kwargs(config: RunConfig, topo, extra_env=None) -> dict:
    env = dict(os.environ)
    preexec = None
    if config.pin:
        try:
            plan = build_plan(config.cpu_expr, topo, config.model, config.skip_mask)
            env = pinned_env(plan, env)
        except (PinError, ShimError) as exc:
            raise CliError(str(exc), EXIT_PIN) from None
        preexec = child_setup(plan)
    if extra_env:
        env.update(extra_env)
    return {"env": env, "preexec_fn": preexec}


def _launch(command, **kwargs):
    if not command:
        return None
    try:
        return subprocess.Popen(command, **kwargs)
    except OSError as exc:
        raise CliError(f"cannot launch {command[0]}: {exc.strerror}", EXIT_LAUNCH) from None


class _Forward:
    """Forward SIGINT/SIGTERM to the child while it runs."""

    def __init__(self, child):
        self.child = child
        self.saved = {}

    def __enter__(self):
        if self.child is not None:
            for sig in (signal.SIGINT, signal.SIGTERM):
                self.saved[sig] = signal.signal(sig, lambda s, f: self.child.send_signal(s))
        return self

    def __exit__(self, *exc):
        for sig, handler in self.saved.items():
            signal.signal(sig, handler)


def _header(out, profile, clock_hz, group_name):
    out.write(f"{RULE}\nCPU type:\t{profile.name}\nCPU clock:\t{clock_hz / 1e9:.2f} GHz\n{RULE}\n")
    out.write(f"Measuring group {group_name}\n{RULE}\n")


def _print_tables(out, session, group, counts, cpus, clock_hz, line_size, mode):
    events = [ev for ev in session.events]
    if group is not None:
        events = group.events
    out.write(event_table(cpus, events, counts))
    if group is not None and group.metrics:
        report = eval_metrics(group, counts, clock_hz, cpus=cpus, mode=mode, line_size=line_size)
        out.write(metric_table(report))


# --------------------------------------------------------------------------
# measurement modes

def run_wrapper_mode(config: RunConfig, out=sys.stdout, totals_out=None) -> int:
    """Count over the lifetime of ``config.command``; returns its exit code.

    ``totals_out`` (a dict) receives the exact whole-run counts.
    """
    topo = _topology(config.topology)
    cpus = _cpus(config.cpu_expr, topo)
    backend = _backend()
    profile = backend.profile()
    group, session = _measurement(config, profile)
    session.attach(cpus, topo)
    kwargs = _child_kwargs(config, topo)
    try:
        session.start(backend)
        child = _launch(config.command, **kwargs)
        with _Forward(child):
            rc = child.wait() if child is not None else 0
        totals = session.stop()
    except (BackendError, SessionStateError) as exc:
        raise CliError(str(exc), EXIT_BACKEND) from None
    if totals_out is not None:
        totals_out.update(totals.counts)
    clock_hz = _clock(backend, topo)
    _header(out, profile, clock_hz, group.name if group else config.events)
    try:
        _print_tables(out, session, group, totals.counts, cpus, clock_hz, topo.line_size(), "whole-run")
    except MetricEvalError as exc:
        raise CliError(f"metric evaluation failed: {exc}", EXIT_ALLOC) from None
    return rc


def timeline_records(deltas, cpus, group, session, start_ns, clock_hz, line_size):
    """Machine-readable records ``(t_ns, cpu, name, value)`` for one interval."""
    t = deltas.timestamp_ns - start_ns
    records = []
    report = None
    if group is not None and group.metrics and deltas.seconds > 0:
        report = eval_metrics(
            group, deltas.counts, clock_hz, cpus=cpus, mode="timeline-sample",
            seconds=deltas.seconds, line_size=line_size,
        )
    events = group.events if group is not None else session.events
    for cpu in cpus:
        for ev in events:
            records.append((t, cpu, ev, deltas.counts[(cpu, ev)]))
        if report is not None:
            for label in report.labels:
                records.append((t, cpu, label, report.values[cpu][label]))
    return records


def _format_record(rec) -> str:
    t, cpu, name, value = rec
    if isinstance(value, float):
        value = "nan" if value != value else repr(value)
    return f"{t},{cpu},{name},{value}"


def run_timeline_mode(config: RunConfig, out=sys.stdout, records=None) -> int:
    """Print counter differences every ``config.interval_ms`` until the
    program exits (live backend) or the trace ends (replay backend)."""
    topo = _topology(config.topology)
    cpus = _cpus(config.cpu_expr, topo)
    backend = _backend()
    profile = backend.profile()
    group, session = _measurement(config, profile)
    session.attach(cpus, topo)
    clock_hz = _clock(backend, topo)
    line_size = topo.line_size()
    interval = config.interval_ms / 1000.0
    kwargs = _child_kwargs(config, topo)
    replay = isinstance(backend, ReplayBackend)

    def emit(deltas):
        for rec in timeline_records(deltas, cpus, group, session, start_ns, clock_hz, line_size):
            if records is not None:
                records.append(rec)
            out.write(_format_record(rec) + "\n")
        out.flush()

    try:
        session.start(backend)
    except BackendError as exc:
        raise CliError(str(exc), EXIT_BACKEND) from None
    start_ns = session._first_ns
    out.write("# t_ns,cpu,metric,value\n")
    child = _launch(config.command, **kwargs)
    rc = 0
    with _Forward(child):
        while True:
            if replay:
                if backend.exhausted:
                    break
            elif child is None or child.poll() is not None:
                break
            backend.wait(interval)
            try:
                emit(session.read_deltas())
            except (BackendError, MetricEvalError) as exc:
                out.write(f"{backend.now_ns() - start_ns},-1,error,{exc}\n")
        if child is not None:
            rc = child.wait()
    try:
        final = session.stop()
    except BackendError as exc:
        raise CliError(str(exc), EXIT_BACKEND) from None
    if final.seconds > 0 or any(final.counts.values()):
        emit(final)
    return rc


def run_marker_mode(config: RunConfig, out=sys.stdout) -> int:
    """Run an instrumented program and print one table set per region."""
    topo = _topology(config.topology)
    cpus = _cpus(config.cpu_expr, topo)
    backend = _backend()
    profile = backend.profile()
    group, session = _measurement(config, profile)
    session.attach(cpus, topo)
    fd, result_path = tempfile.mkstemp(prefix="nodeperf-marker-", suffix=".txt")
    os.close(fd)
    os.unlink(result_path)
    extra = {
        marker_api.FILE_ENV: result_path,
        marker_api.EVENTS_ENV: ",".join(f"{ev}:{c}" for c, ev in session.assignments.items()),
        marker_api.GROUP_ENV: group.name if group else "custom",
        marker_api.CPUS_ENV: ",".join(map(str, cpus)),
    }
    kwargs = _child_kwargs(config, topo, extra)
    child = _launch(config.command, **kwargs)
    with _Forward(child):
        rc = child.wait() if child is not None else 0
    try:
        results = marker_api.read_marker_file(result_path)
    except marker_api.MarkerProtocolError as exc:
        raise CliError(f"marker protocol error: {exc}", EXIT_PROTOCOL) from None
    finally:
        if os.path.exists(result_path):
            os.unlink(result_path)
    clock_hz = _clock(backend, topo)
    _header(out, profile, clock_hz, group.name if group else config.events)
    for region in results.regions:
        per_core = region.per_core()
        if not per_core:
            continue
        counts = {(c, ev): v for c, evs in per_core.items() for ev, v in evs.items()}
        region_cpus = list(per_core)
        out.write(f"Region: {region.name}\n")
        calls: dict = {}
        for row in region.rows:
            calls[row.core_id] = calls.get(row.core_id, 0) + row.call_count
        out.write("Calls: " + " ".join(f"core {c}: {calls[c]}" for c in region_cpus) + "\n")
        try:
            _print_tables(out, session, group, counts, region_cpus, clock_hz, topo.line_size(), "region")
        except MetricEvalError as exc:
            raise CliError(f"marker protocol error: region {region.name}: {exc}", EXIT_PROTOCOL) from None
    return rc


# --------------------------------------------------------------------------
# subcommands

def cmd_topology(args, out) -> int:
    topo = _topology(args.topology)
    out.write(render_topology(topo))
    out.write(DUMP_MARK)
    out.write(yaml.safe_dump(dump_topology(topo), sort_keys=False, default_flow_style=None, width=100))
    return 0


def _profile_for_listing(arch: str | None) -> ArchProfile:
    try:
        if arch:
            return load_profile(arch)
        return _backend().profile()
    except ProfileError as exc:
        raise CliError(str(exc), EXIT_BACKEND) from None


def cmd_perfctr(args, out) -> int:
    if args.list_groups:
        profile = _profile_for_listing(args.arch)
        out.write(f"Groups for {profile.name}:\n")
        for info in list_groups(profile):
            if info.available:
                out.write(f"{info.name:>12}\t{info.description}\n")
            else:
                out.write(f"{info.name:>12}\tunavailable: {info.reason}\n")
        return 0
    if not args.group:
        raise CliError("-g GROUP or -g EVENT:COUNTER,... is required", EXIT_USAGE)
    expr = args.pin_cpus or args.cpus
    if expr is None:
        raise CliError("one of -c or -C is required", EXIT_USAGE)
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    raw = ":" in args.group
    config = RunConfig(
        expr, pin=args.pin_cpus is not None,
        group=None if raw else args.group, events=args.group if raw else None,
        marker=args.marker, interval_ms=args.interval, model=args.model,
        skip_mask=args.skip, command=command, topology=args.topology,
    )
    if config.interval_ms is not None:
        return run_timeline_mode(config, out)
    if not command:
        raise CliError("no program given to measure", EXIT_USAGE)
    if config.marker:
        return run_marker_mode(config, out)
    return run_wrapper_mode(config, out)


def cmd_pin(args, out) -> int:
    command = list(args.command)
    if command and command[0] == "--":
        command = command[1:]
    if not command:
        raise CliError("no program given to pin", EXIT_USAGE)
    topo = _topology(args.topology)
    try:
        plan = build_plan(args.cpus, topo, args.model, args.skip, args.interleave)
    except (ExprError, UnknownDomainError) as exc:
        raise CliError(f"bad CPU expression: {exc}", EXIT_EXPR) from None
    except PinError as exc:
        raise CliError(str(exc), EXIT_PIN) from None
    log.info("pinning to %s, skip mask %#x, memory policy %s", plan.cpu_list, plan.skip_mask, plan.memory_policy)
    try:
        exec_pinned(plan, command)
    except FileNotFoundError:
        raise CliError(f"cannot launch {command[0]}: not found", EXIT_LAUNCH) from None
    except (OSError, ShimError) as exc:
        raise CliError(str(exc), EXIT_PIN) from None
    return 0  # not reached


def cmd_bench(args, out) -> int:
    if args.list:
        for k in list_kernels():
            out.write(
                f"{k.name}\t{k.array_count} arrays\t{k.bytes_per_iter} B/iter\t"
                f"{k.flops_per_iter} flops/iter\t{k.body}\n"
            )
        return 0
    topo = _topology(args.topology)
    try:
        spec = WorkloadSpec(args.kernel, args.elements, args.iterations, args.cpus, args.init)
        _cpus(spec.thread_expr, topo)
        kwargs = {"pin": None} if args.no_pin else {}
        result = run_benchmark(spec, topo, **kwargs)
    except BenchError as exc:
        raise CliError(str(exc), EXIT_BENCH) from None
    except OSError as exc:
        raise CliError(str(exc), EXIT_PIN) from None
    out.write(f"{RULE}\nKernel:\t\t{spec.kernel} ({spec.kernel_def.body})\n")
    out.write(f"Implementation:\t{KERNEL_BACKEND}\nThreads:\t{len(result.cpus)} on CPUs {','.join(map(str, result.cpus))}\n")
    out.write(f"Init policy:\t{spec.init_policy}\n{RULE}\n")
    rows = [
        ["Elements", str(spec.elements)],
        ["Iterations", str(spec.iterations)],
        ["Runtime [s]", format_value(result.wall_seconds)],
        ["Bandwidth [MBytes/s]", format_value(result.bandwidth_mbytes_per_sec)],
        ["MFlops/s", format_value(result.mflops_per_sec)],
    ]
    out.write(box_table(["Metric", "Value"], rows))
    out.write("kernel,N,iters,threads,seconds,MB/s,MFlop/s\n")
    out.write(result.csv_line() + "\n")
    return 0


def _hex(text: str) -> int:
    try:
        return int(text, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a hex mask such as 0x1, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodeperf", description=__doc__.splitlines()[0])
    parser.add_argument("--topology", metavar="FILE", help="topology document instead of probing the host")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("topology", help="show thread, cache and NUMA topology")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("perfctr", help="measure hardware counters")
    where = p.add_mutually_exclusive_group()
    where.add_argument("-c", dest="cpus", metavar="EXPR", help="CPUs to measure")
    where.add_argument("-C", dest="pin_cpus", metavar="EXPR", help="CPUs to measure and pin the program to")
    p.add_argument("-g", dest="group", metavar="GROUP|EVENTS", help="group name or EVENT:COUNTER list")
    p.add_argument("-a", dest="list_groups", action="store_true", help="list available groups")
    p.add_argument("-m", dest="marker", action="store_true", help="marker mode (instrumented program)")
    p.add_argument("-d", dest="interval", type=float, metavar="MS", help="timeline mode with this interval")
    p.add_argument("-t", dest="model", help="threading model for -C (gcc, intel, pthreads)")
    p.add_argument("-s", dest="skip", type=_hex, metavar="HEXMASK", help="skip mask for -C")
    p.add_argument("--arch", help="architecture profile for -a")
    p.add_argument("command", nargs=argparse.REMAINDER)
    p.set_defaults(func=cmd_perfctr)

    p = sub.add_parser("pin", help="run a program with threads pinned in creation order")
    p.add_argument("-c", "-C", dest="cpus", metavar="EXPR", required=True)
    p.add_argument("-t", dest="model", help="threading model (gcc, intel, pthreads)")
    p.add_argument("-s", dest="skip", type=_hex, metavar="HEXMASK", help="skip mask, overrides -t")
    p.add_argument("-i", dest="interleave", action="store_true", help="interleave memory over the NUMA domains used")
    p.add_argument("command", nargs=argparse.REMAINDER)
    p.set_defaults(func=cmd_pin)

    p = sub.add_parser("bench", help="streaming memory benchmark")
    p.add_argument("-l", dest="list", action="store_true", help="list kernels")
    p.add_argument("-k", dest="kernel", default="triad", choices=sorted(KERNELS))
    p.add_argument("-n", dest="elements", type=int, default=10_000_000)
    p.add_argument("-i", dest="iterations", type=int, default=10)
    p.add_argument("-c", dest="cpus", default="N:0")
    p.add_argument("--init", default="parallelFirstTouch", choices=INIT_POLICIES)
    p.add_argument("--no-pin", action="store_true", help="leave worker threads unpinned")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="nodeperf: %(message)s")
    try:
        return args.func(args, out)
    except CliError as exc:
        sys.stderr.write(f"nodeperf: {exc}\n")
        return exc.code
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
