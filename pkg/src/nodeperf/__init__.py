"""Node-level performance tooling: topology, counters, pinning, benchmarks."""

from .domain import CpuList, parse_expr, resolve, resolve_text
from .topology import TopologyMap, load_topology_file, probe_system_topology, render_topology

__version__ = "0.1.0"
