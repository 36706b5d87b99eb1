"""Performance groups: named event sets with derived-metric formulas.

Group files live in ``groups/<arch>/<NAME>.txt``. The format is
line oriented; ``#`` starts a comment and blank lines are ignored::

    SHORT Double precision MFlops/s

    EVENTS
    SIMD_COMP_INST_RETIRED_PACKED_DOUBLE PMC0
    SIMD_COMP_INST_RETIRED_SCALAR_DOUBLE PMC1

    METRICS
    Runtime | s | time
    CPI | | CPU_CLK_UNHALTED_CORE/INSTR_RETIRED_ANY
    DP MFlops/s | | 1.0E-06*(SIMD_COMP_INST_RETIRED_PACKED_DOUBLE*2+SIMD_COMP_INST_RETIRED_SCALAR_DOUBLE)/time

An ``EVENTS`` line is ``EVENT COUNTER``. A ``METRICS`` line is three
``|``-separated fields: label, unit (may be empty) and formula. Formulas
use ``+ - * /``, parentheses, numeric literals and identifiers: event
names, ``time`` (seconds), ``clock`` (Hz) and ``linesize`` (bytes).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

from .counters.arch import ArchProfile
from .counters.session import AllocationError, EventSpec, allocate_counters

__all__ = [
    "FormulaError",
    "GroupInfo",
    "GroupLoadError",
    "Metric",
    "MetricEvalError",
    "MetricGroup",
    "MetricReport",
    "UNDEFINED",
    "evaluate",
    "eval_metrics",
    "find_group",
    "group_dir",
    "is_undefined",
    "list_groups",
    "load_group",
    "load_group_file",
    "parse_formula",
]

UNDEFINED = math.nan
BUILTINS = ("time", "clock", "linesize")


def is_undefined(value: float) -> bool:
    return math.isnan(value)


class FormulaError(ValueError):
    pass


class GroupLoadError(ValueError):
    def __init__(self, source: str, lineno: int, message: str):
        self.source = source
        self.lineno = lineno
        super().__init__(f"{source}:{lineno}: {message}")


class MetricEvalError(KeyError):
    pass


# --------------------------------------------------------------------------
# Formulas

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_.]*)|(?P<op>[-+*/()]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise FormulaError(f"unexpected character {text[pos:].lstrip()[:1]!r} in {text!r}")
        pos = m.end()
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
    return tokens


class _FormulaParser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = (op, node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            return ("neg", self.unary())
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.atom()

    def atom(self):
        kind, value = self.take()
        if kind == "num":
            return ("num", float(value))
        if kind == "id":
            return ("id", value)
        if (kind, value) == ("op", "("):
            node = self.expr()
            if self.take() != ("op", ")"):
                raise FormulaError(f"missing ')' in {self.text!r}")
            return node
        raise FormulaError(f"unexpected {value or 'end of formula'!r} in {self.text!r}")

    def parse(self):
        if not self.tokens:
            raise FormulaError("empty formula")
        node = self.expr()
        if self.i != len(self.tokens):
            raise FormulaError(f"trailing {self.peek()[1]!r} in {self.text!r}")
        return node


def parse_formula(text: str):
    """Parse a formula into a nested-tuple expression tree."""
    return _FormulaParser(text).parse()


def identifiers(tree) -> set[str]:
    if tree[0] == "id":
        return {tree[1]}
    if tree[0] == "num":
        return set()
    return set().union(*(identifiers(t) for t in tree[1:]))


class _Undefined(Exception):
    pass


def _eval(tree, env):
    kind = tree[0]
    if kind == "num":
        return tree[1]
    if kind == "id":
        try:
            return env[tree[1]]
        except KeyError:
            raise MetricEvalError(tree[1]) from None
    if kind == "neg":
        return -_eval(tree[1], env)
    a = _eval(tree[1], env)
    b = _eval(tree[2], env)
    if kind == "+":
        return a + b
    if kind == "-":
        return a - b
    if kind == "*":
        return a * b
    if b == 0:
        raise _Undefined
    return a / b


def evaluate(tree, env: dict) -> float:
    """Evaluate in float64; division by zero yields :data:`UNDEFINED`."""
    try:
        value = float(_eval(tree, {k: float(v) for k, v in env.items()}))
    except _Undefined:
        return UNDEFINED
    return value if math.isfinite(value) else UNDEFINED


# --------------------------------------------------------------------------
# Groups

@dataclass(frozen=True)
class Metric:
    label: str
    unit: str
    formula: str
    tree: tuple = field(compare=False, repr=False)

    @property
    def display(self) -> str:
        return f"{self.label} [{self.unit}]" if self.unit else self.label


@dataclass(frozen=True)
class MetricGroup:
    name: str
    description: str
    event_specs: tuple
    metrics: tuple
    arch: str
    fixed_events: tuple = ()
    cycles_event: str = "CPU_CLK_UNHALTED_CORE"

    @property
    def events(self) -> list[str]:
        out = list(self.fixed_events)
        out += [s.event for s in self.event_specs if s.event not in out]
        return out


def group_dir() -> Path:
    return Path(str(resources.files("nodeperf") / "data" / "groups"))


def load_group(text: str, profile: ArchProfile, name: str = "GROUP", source: str = "<group>") -> MetricGroup:
    """Parse and validate a group document against ``profile``."""
    section = None
    description = ""
    specs: list[EventSpec] = []
    metrics: list[Metric] = []
    spec_lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line in ("EVENTS", "METRICS"):
            section = line
            continue
        if line.startswith("SHORT") and section is None:
            description = line[5:].strip()
            continue
        if section == "EVENTS":
            parts = line.split()
            if len(parts) != 2:
                raise GroupLoadError(source, lineno, "expected 'EVENT COUNTER'")
            specs.append(EventSpec(parts[0], parts[1]))
            spec_lines.append(lineno)
        elif section == "METRICS":
            parts = [p.strip() for p in line.split("|")]
            if len(parts) != 3 or not parts[0] or not parts[2]:
                raise GroupLoadError(source, lineno, "expected 'label | unit | formula'")
            try:
                tree = parse_formula(parts[2])
            except FormulaError as exc:
                raise GroupLoadError(source, lineno, str(exc)) from None
            metrics.append(Metric(parts[0], parts[1], parts[2], tree))
            metric_line = lineno
            known = {s.event for s in specs} | set(profile.fixed_events) | set(BUILTINS)
            unknown = sorted(identifiers(tree) - known)
            if unknown:
                raise GroupLoadError(source, metric_line, f"unknown identifier {unknown[0]!r} in formula")
        else:
            raise GroupLoadError(source, lineno, f"unexpected line outside a section: {line!r}")
    try:
        allocate_counters(specs, profile)
    except AllocationError as exc:
        bad = next(
            (ln for s, ln in zip(specs, spec_lines) if s.event in str(exc) or s.counter in str(exc)),
            spec_lines[0] if spec_lines else 0,
        )
        raise GroupLoadError(source, bad, str(exc)) from None
    return MetricGroup(
        name, description, tuple(specs), tuple(metrics), profile.name,
        profile.fixed_events, profile.cycles_event,
    )


def load_group_file(path, profile: ArchProfile) -> MetricGroup:
    path = Path(path)
    return load_group(path.read_text(), profile, path.stem, str(path))


class GroupInfo(NamedTuple):
    name: str
    available: bool
    reason: str
    description: str


def list_groups(profile: ArchProfile, directory=None) -> list[GroupInfo]:
    """Every group file for ``profile``, sorted by name, with availability."""
    directory = Path(directory) if directory is not None else group_dir() / profile.name
    out = []
    if not directory.is_dir():
        return out
    for path in sorted(directory.glob("*.txt")):
        try:
            g = load_group_file(path, profile)
            out.append(GroupInfo(path.stem, True, "", g.description))
        except (GroupLoadError, OSError) as exc:
            out.append(GroupInfo(path.stem, False, str(exc), ""))
    return out


def find_group(name: str, profile: ArchProfile, directory=None) -> MetricGroup:
    directory = Path(directory) if directory is not None else group_dir() / profile.name
    path = directory / f"{name}.txt"
    if not path.exists():
        raise GroupLoadError(str(path), 0, f"no group {name!r} for {profile.name}")
    return load_group_file(path, profile)


# --------------------------------------------------------------------------
# Evaluation

@dataclass
class MetricReport:
    group: str
    mode: str  # whole-run | region | timeline-sample
    cpus: tuple
    labels: tuple
    runtime: dict  # os_id -> seconds
    values: dict  # os_id -> {label: value}

    def column(self, cpu: int) -> list[float]:
        return [self.values[cpu][label] for label in self.labels]


def eval_metrics(
    group: MetricGroup,
    deltas: dict,
    clock_hz: float,
    *,
    cpus=None,
    mode: str = "whole-run",
    seconds: float | None = None,
    line_size: int = 64,
) -> MetricReport:
    """Evaluate every metric of ``group`` per CPU.

    ``deltas`` maps ``(os_id, event)`` to counts. In whole-run and region
    mode ``time`` is the CPU's unhalted cycles divided by ``clock_hz``; in
    timeline mode it is the wall interval ``seconds``.
    """
    if cpus is None:
        cpus = sorted({cpu for cpu, _ in deltas})
    if mode == "timeline-sample" and seconds is None:
        raise ValueError("timeline mode needs the wall interval")
    runtime = {}
    values = {}
    for cpu in cpus:
        env = {}
        for ev in group.events:
            if (cpu, ev) not in deltas:
                raise MetricEvalError(f"no count for {ev} on CPU {cpu}")
            env[ev] = deltas[(cpu, ev)]
        if mode == "timeline-sample":
            t = float(seconds)
        else:
            if (cpu, group.cycles_event) not in deltas:
                raise MetricEvalError(f"no count for {group.cycles_event} on CPU {cpu}")
            t = deltas[(cpu, group.cycles_event)] / clock_hz
        env.update(time=t, clock=clock_hz, linesize=line_size)
        runtime[cpu] = t
        values[cpu] = {m.display: evaluate(m.tree, env) for m in group.metrics}
    return MetricReport(group.name, mode, tuple(cpus), tuple(m.display for m in group.metrics), runtime, values)
