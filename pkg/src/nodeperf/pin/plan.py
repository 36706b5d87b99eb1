"""Pin plans: which CPU each created thread gets, and the memory policy.

The main thread takes the first CPU of the list. Threads created later are
numbered by creation order; a set bit in the skip mask leaves that thread
unpinned (runtime management threads), every other thread takes the next
list entry. When threads outnumber the list the assignment wraps around to
the start of the list and a warning is recorded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..domain import CpuList, resolve_text
from ..topology import TopologyMap

__all__ = [
    "CPUS_ENV",
    "MODELS",
    "MemoryPolicy",
    "PinEnvError",
    "PinError",
    "PinPlan",
    "Pinned",
    "Skipped",
    "assign_main",
    "assign_on_create",
    "build_plan",
    "decode_env",
    "encode_env",
    "simulate",
]

CPUS_ENV = "NODEPERF_PIN_CPUS"
SKIP_ENV = "NODEPERF_PIN_SKIP"
MODEL_ENV = "NODEPERF_PIN_MODEL"
POLICY_ENV = "NODEPERF_PIN_POLICY"

# threading model -> skip mask
MODELS = {
    "gcc": 0x0,
    "pthreads": 0x0,
    # Intel OpenMP spawns a management thread first
    "intel": 0x1,
}
DEFAULT_MODEL = "gcc"


class PinError(ValueError):
    pass


class PinEnvError(PinError):
    pass


@dataclass(frozen=True)
class MemoryPolicy:
    kind: str = "default"  # default | interleave
    domains: tuple = ()

    def __post_init__(self):
        if self.kind not in ("default", "interleave"):
            raise PinError(f"unknown memory policy {self.kind!r}")
        if self.kind == "interleave" and not self.domains:
            raise PinError("interleave policy needs at least one NUMA domain")

    def __str__(self):
        if self.kind == "interleave":
            return "interleave:" + ",".join(map(str, self.domains))
        return "default"


@dataclass(frozen=True)
class PinPlan:
    cpu_list: CpuList
    skip_mask: int = 0
    memory_policy: MemoryPolicy = MemoryPolicy()
    model: str = DEFAULT_MODEL

    def __post_init__(self):
        if self.skip_mask < 0:
            raise PinError("skip mask must be non-negative")


@dataclass(frozen=True)
class Pinned:
    os_id: int
    position: int
    wrapped: bool = False


@dataclass(frozen=True)
class Skipped:
    pass


def build_plan(
    expr: str,
    topo: TopologyMap,
    model: str | None = None,
    mask: int | None = None,
    interleave: bool = False,
) -> PinPlan:
    label = model or DEFAULT_MODEL
    if label not in MODELS:
        raise PinError(f"unknown threading model {label!r}; choose from {', '.join(sorted(MODELS))}")
    cpus = resolve_text(expr, topo)
    skip = MODELS[label] if mask is None else mask
    policy = MemoryPolicy()
    if interleave:
        domains = sorted({topo.thread(c).numa_id for c in cpus})
        policy = MemoryPolicy("interleave", tuple(domains))
    return PinPlan(cpus, skip, policy, label)


def assign_main(plan: PinPlan) -> int:
    return plan.cpu_list[0]


def assign_on_create(plan: PinPlan, creation_index: int) -> Pinned | Skipped:
    """Decision for the thread created ``creation_index``-th (0-based)."""
    if creation_index < 0:
        raise PinError("creation index must be >= 0")
    if plan.skip_mask >> creation_index & 1:
        return Skipped()
    below = plan.skip_mask & ((1 << creation_index) - 1)
    pinned_before = creation_index - bin(below).count("1")
    slot = 1 + pinned_before
    n = len(plan.cpu_list)
    return Pinned(plan.cpu_list[slot % n], slot % n, slot >= n)


def simulate(plan: PinPlan, creations: int) -> list:
    """Creation log: ``(index, decision)`` for the first ``creations`` threads."""
    return [(i, assign_on_create(plan, i)) for i in range(creations)]


def encode_env(plan: PinPlan) -> dict:
    return {
        CPUS_ENV: ",".join(map(str, plan.cpu_list)),
        SKIP_ENV: hex(plan.skip_mask),
        MODEL_ENV: plan.model,
        POLICY_ENV: str(plan.memory_policy),
    }


_CPUS = re.compile(r"^\d+(,\d+)*$")
_HEX = re.compile(r"^0[xX][0-9a-fA-F]+$")


def decode_env(env) -> PinPlan:
    try:
        cpus, mask = env[CPUS_ENV], env[SKIP_ENV]
    except KeyError as exc:
        raise PinEnvError(f"missing environment variable {exc.args[0]}") from None
    if not _CPUS.match(cpus):
        raise PinEnvError(f"malformed {CPUS_ENV}={cpus!r}")
    if not _HEX.match(mask):
        raise PinEnvError(f"malformed {SKIP_ENV}={mask!r}, expected hex such as 0x1")
    policy_text = env.get(POLICY_ENV, "default")
    if policy_text == "default":
        policy = MemoryPolicy()
    elif policy_text.startswith("interleave:") and _CPUS.match(policy_text[11:]):
        policy = MemoryPolicy("interleave", tuple(int(d) for d in policy_text[11:].split(",")))
    else:
        raise PinEnvError(f"malformed {POLICY_ENV}={policy_text!r}")
    try:
        cpu_list = CpuList(tuple(int(c) for c in cpus.split(",")))
    except ValueError as exc:
        raise PinEnvError(str(exc)) from None
    return PinPlan(cpu_list, int(mask, 16), policy, env.get(MODEL_ENV, DEFAULT_MODEL))
