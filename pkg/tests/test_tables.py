import math

import pytest

from nodeperf.metrics import MetricReport
from nodeperf.tables import box_table, event_table, format_value, metric_table


@pytest.mark.parametrize("value,text", [
    (7.679061e-05, "7.67906e-05"),
    (0.000177945, "0.000177945"),
    (18802400, "1.88024e+07"),
    (313742, "313742"),
    (6.9273, "6.9273"),
    (1645.8, "1645.8"),
    (0, "0"),
    (math.nan, "-"),
    (None, "-"),
])
def test_format_value(value, text):
    assert format_value(value) == text


def test_box_table_layout():
    out = box_table(["Metric", "core 0"], [["CPI", "0.693493"]])
    assert out.splitlines() == [
        "+--------+----------+",
        "| Metric |  core 0  |",
        "+--------+----------+",
        "|  CPI   | 0.693493 |",
        "+--------+----------+",
    ]


def test_event_and_metric_tables():
    counts = {(0, "INSTR_RETIRED_ANY"): 313742, (1, "INSTR_RETIRED_ANY"): 376154}
    ev = event_table([0, 1], ["INSTR_RETIRED_ANY"], counts)
    assert "| INSTR_RETIRED_ANY | 313742 | 376154 |" in ev
    rep = MetricReport("G", "whole-run", (0,), ("CPI",), {0: 1.0}, {0: {"CPI": math.nan}})
    assert "|  CPI   |   -    |" in metric_table(rep)
