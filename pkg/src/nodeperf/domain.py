"""Thread-domain expressions.

An expression names hardware threads by logical position inside a thread
domain rather than by OS id::

    N:0-7            first eight threads of the node
    S0:0             first thread of socket 0
    M0:0,1@M2:0,1    first two threads of NUMA domains 0 and 2
    S1               every thread of socket 1
    0-3              OS ids 0 to 3 as they are (no domain prefix)

Logical positions index into :func:`nodeperf.topology.enumerate_domain`, so
physical cores come before their SMT siblings. A term without a prefix
lists OS ids directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .topology import TopologyMap, enumerate_domain

__all__ = [
    "CpuList",
    "DomainExpr",
    "DuplicateCpuError",
    "ExprError",
    "ExprParseError",
    "IndexOutOfRangeError",
    "Term",
    "format_expr",
    "parse_expr",
    "resolve",
    "resolve_text",
]

Selector = Union[int, tuple[int, int]]


class ExprError(ValueError):
    pass


class ExprParseError(ExprError):
    def __init__(self, text: str, offset: int, message: str):
        self.text = text
        self.offset = offset
        super().__init__(f"{message} at offset {offset} in {text!r}")


class IndexOutOfRangeError(ExprError):
    pass


class DuplicateCpuError(ExprError):
    pass


@dataclass(frozen=True)
class Term:
    tag: str  # "" for a plain OS id list
    # None selects the whole domain (bare term such as ``S0``)
    selectors: tuple[Selector, ...] | None

    def indices(self, size: int) -> list[int]:
        if self.selectors is None:
            return list(range(size))
        out: list[int] = []
        for sel in self.selectors:
            if isinstance(sel, tuple):
                out.extend(range(sel[0], sel[1] + 1))
            else:
                out.append(sel)
        return out


@dataclass(frozen=True)
class DomainExpr:
    terms: tuple[Term, ...]

    def __str__(self):
        return format_expr(self)


@dataclass(frozen=True)
class CpuList:
    os_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.os_ids:
            raise ExprError("empty CPU list")
        if len(set(self.os_ids)) != len(self.os_ids):
            raise DuplicateCpuError(f"duplicate CPU in {list(self.os_ids)}")

    def __iter__(self):
        return iter(self.os_ids)

    def __len__(self):
        return len(self.os_ids)

    def __getitem__(self, i):
        return self.os_ids[i]

    def __str__(self):
        return ",".join(map(str, self.os_ids))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message, offset=None):
        raise ExprParseError(self.text, self.pos if offset is None else offset, message)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def integer(self) -> int:
        start = self.pos
        while self.peek().isdigit() and self.peek().isascii():
            self.pos += 1
        if start == self.pos:
            self.error("expected an integer" if self.peek() else "unexpected end of expression")
        return int(self.text[start:self.pos])

    def tag(self) -> str:
        start = self.pos
        c = self.peek()
        if c == "N":
            self.pos += 1
            return "N"
        if c in ("S", "C", "M"):
            self.pos += 1
            if not self.peek().isdigit():
                self.error(f"domain prefix {c!r} needs an index")
            return c + str(self.integer())
        self.error(f"unknown domain prefix {c!r}" if c else "expected a domain prefix", start)

    def item(self) -> Selector:
        start = self.pos
        lo = self.integer()
        if self.peek() == "-":
            self.pos += 1
            hi = self.integer()
            if hi < lo:
                self.error(f"reversed range {lo}-{hi}", start)
            return (lo, hi)
        return lo

    def selectors(self) -> tuple:
        items = [self.item()]
        while self.peek() == ",":
            self.pos += 1
            items.append(self.item())
        return tuple(items)

    def term(self) -> Term:
        if self.peek().isdigit():
            return Term("", self.selectors())
        tag = self.tag()
        if self.peek() != ":":
            return Term(tag, None)
        self.pos += 1
        return Term(tag, self.selectors())

    def parse(self) -> DomainExpr:
        terms = [self.term()]
        while self.peek() == "@":
            self.pos += 1
            terms.append(self.term())
        if self.pos != len(self.text):
            self.error(f"unexpected character {self.peek()!r}")
        return DomainExpr(tuple(terms))


def parse_expr(text: str) -> DomainExpr:
    """Parse ``text`` into a :class:`DomainExpr`.

    Raises :class:`ExprParseError` carrying the byte offset of the problem.
    """
    return _Parser(text).parse()


def _format_selector(sel: Selector) -> str:
    return f"{sel[0]}-{sel[1]}" if isinstance(sel, tuple) else str(sel)


def format_expr(expr: DomainExpr) -> str:
    parts = []
    for term in expr.terms:
        if term.selectors is None:
            parts.append(term.tag)
        elif not term.tag:
            parts.append(",".join(map(_format_selector, term.selectors)))
        else:
            parts.append(term.tag + ":" + ",".join(map(_format_selector, term.selectors)))
    return "@".join(parts)


def resolve(expr: DomainExpr, topo: TopologyMap) -> CpuList:
    """Map every logical index to an OS CPU id, concatenating terms in order."""
    out: list[int] = []
    seen: dict[int, str] = {}
    for term in expr.terms:
        label = format_expr(DomainExpr((term,)))
        if term.tag:
            members = enumerate_domain(topo, term.tag)
            indices = term.indices(len(members))
        else:
            members = topo.os_ids
            indices = []
            for os_id in term.indices(0):
                if os_id not in members:
                    raise IndexOutOfRangeError(f"term {label!r}: no CPU with OS id {os_id}")
                indices.append(members.index(os_id))
        for idx in indices:
            if idx >= len(members):
                raise IndexOutOfRangeError(
                    f"term {label!r}: index {idx} out of range, {term.tag} has {len(members)} threads"
                )
            cpu = members[idx]
            if cpu in seen:
                raise DuplicateCpuError(
                    f"term {label!r}: CPU {cpu} already selected by {seen[cpu]!r}"
                )
            seen[cpu] = label
            out.append(cpu)
    return CpuList(tuple(out))


def resolve_text(text: str, topo: TopologyMap) -> CpuList:
    return resolve(parse_expr(text), topo)
