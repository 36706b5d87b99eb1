import os
from pathlib import Path

import pytest

from nodeperf.counters.arch import load_profile
from nodeperf.topology import load_topology_file

FIXTURES = Path(__file__).parent / "fixtures"
TOPOLOGIES = FIXTURES / "topologies"
TRACES = FIXTURES / "traces"
GOLDEN = FIXTURES / "golden"


def topo_path(name: str) -> Path:
    return TOPOLOGIES / f"{name}.yaml"


@pytest.fixture(scope="session")
def westmere():
    return load_topology_file(topo_path("westmere2x6x2"))


@pytest.fixture(scope="session")
def numa4():
    return load_topology_file(topo_path("numa4"))


@pytest.fixture(scope="session")
def nehalem2x4():
    return load_topology_file(topo_path("nehalem2x4"))


@pytest.fixture(scope="session")
def core2quad():
    return load_topology_file(topo_path("core2quad"))


@pytest.fixture(scope="session")
def testarch():
    return load_profile("testarch")


def pytest_configure(config):
    config.addinivalue_line("markers", "hardware: needs real counters or a multi-socket host")
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("NODEPERF_HARDWARE_TESTS") == "1":
        return
    skip = pytest.mark.skip(reason="hardware test; set NODEPERF_HARDWARE_TESTS=1")
    for item in items:
        if "hardware" in item.keywords:
            item.add_marker(skip)


# one summary line per acceptance criterion
_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    entry = _criteria.setdefault(n, {"title": mark.kwargs.get("title", ""), "state": "PASS", "notes": []})
    if report.failed:
        entry["state"] = "FAIL"
        entry["notes"].append(f"{item.name} ({report.when})")
    elif report.skipped and report.when in ("setup", "call") and entry["state"] == "PASS":
        entry["state"] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        line = f"criterion {n}: {e['state']}  {e['title']}"
        if e["notes"]:
            line += "  [" + "; ".join(e["notes"]) + "]"
        terminalreporter.write_line(line)
