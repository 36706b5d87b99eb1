"""Box-drawn result tables.

Numbers use six significant digits in C ``%g`` style, so large counts and
tiny runtimes switch to exponent notation (``1.88024e+07``,
``7.67906e-05``). Undefined metric values print as ``-``.
"""

from __future__ import annotations

import math

from .metrics import MetricReport

__all__ = ["box_table", "event_table", "format_value", "metric_table"]

UNDEFINED_CELL = "-"


def format_value(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return UNDEFINED_CELL
    return f"{value:.6g}"


def _center(text: str, width: int) -> str:
    # odd padding goes to the right, as printf-based tables do
    left = (width - len(text)) // 2
    return " " * left + text + " " * (width - len(text) - left)


def box_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) + 2 for h in header]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell) + 2)
    rule = "+" + "+".join("-" * w for w in widths) + "+"

    def line(cells):
        return "|" + "|".join(_center(c, w) for c, w in zip(cells, widths)) + "|"

    out = [rule, line(header), rule]
    out += [line(r) for r in rows]
    out.append(rule)
    return "\n".join(out) + "\n"


def _columns(cpus) -> list[str]:
    return [f"core {c}" for c in cpus]


def event_table(cpus, events, counts: dict) -> str:
    """Raw counts; ``counts`` maps ``(os_id, event)`` to a number."""
    rows = [[ev] + [format_value(counts.get((c, ev), 0)) for c in cpus] for ev in events]
    return box_table(["Event"] + _columns(cpus), rows)


def metric_table(report: MetricReport) -> str:
    rows = [
        [label] + [format_value(report.values[c][label]) for c in report.cpus]
        for label in report.labels
    ]
    return box_table(["Metric"] + _columns(report.cpus), rows)
