"""Thread-to-CPU pinning at thread creation time and NUMA memory policy."""

from .osapi import (
    AffinityError,
    MemoryPolicyError,
    apply_affinity,
    apply_memory_policy,
    current_cpu,
    get_affinity,
    get_memory_policy,
)
from .plan import (
    MODELS,
    MemoryPolicy,
    PinEnvError,
    PinError,
    PinPlan,
    Pinned,
    Skipped,
    assign_main,
    assign_on_create,
    build_plan,
    decode_env,
    encode_env,
    simulate,
)
from .shim import ShimError, child_setup, exec_pinned, pinned_env, shim_path
