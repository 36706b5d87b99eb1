"""Placement-controlled streaming benchmarks (copy, triad)."""

from .core import (
    INIT_POLICIES,
    KERNELS,
    BenchError,
    BenchResult,
    KernelDef,
    PlacementRecorder,
    VerificationError,
    WorkloadSpec,
    bandwidth_mbytes,
    list_kernels,
    mflops,
    run_benchmark,
    verify_result,
)
from .kernels import BACKEND as KERNEL_BACKEND
