"""Thread affinity and NUMA memory policy system calls (Linux)."""

from __future__ import annotations

import ctypes
import ctypes.util
import errno
import os

from .plan import MemoryPolicy

__all__ = [
    "AffinityError",
    "MemoryPolicyError",
    "apply_affinity",
    "apply_memory_policy",
    "current_cpu",
    "get_affinity",
    "get_memory_policy",
]

MPOL_DEFAULT = 0
MPOL_PREFERRED = 1
MPOL_BIND = 2
MPOL_INTERLEAVE = 3

_SYSCALLS = {
    "x86_64": {"set_mempolicy": 238, "get_mempolicy": 239},
    "aarch64": {"set_mempolicy": 237, "get_mempolicy": 236},
}
_MASK_BITS = 1024


class AffinityError(OSError):
    pass


class MemoryPolicyError(OSError):
    pass


def apply_affinity(os_id: int, pid: int = 0) -> None:
    """Restrict the calling thread (``pid=0``) to CPU ``os_id``."""
    try:
        os.sched_setaffinity(pid, {os_id})
    except OSError as exc:
        raise AffinityError(exc.errno, f"cannot pin to CPU {os_id}: {exc.strerror}") from None


def get_affinity(pid: int = 0) -> set[int]:
    return set(os.sched_getaffinity(pid))


def current_cpu() -> int:
    """CPU the calling thread is running on right now."""
    libc = _libc()
    cpu = libc.sched_getcpu()
    if cpu < 0:
        err = ctypes.get_errno()
        raise AffinityError(err, os.strerror(err))
    return cpu


_LIBC = None


def _libc():
    global _LIBC
    if _LIBC is None:
        _LIBC = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
    return _LIBC


def _nr(name: str) -> int:
    try:
        return _SYSCALLS[os.uname().machine][name]
    except KeyError:
        raise MemoryPolicyError(errno.ENOSYS, f"{name} not supported on {os.uname().machine}") from None


def apply_memory_policy(policy: MemoryPolicy) -> None:
    """Set the calling thread's memory policy; inherited by children and
    preserved across exec."""
    libc = _libc()
    words = _MASK_BITS // 64
    mask = (ctypes.c_ulong * words)()
    if policy.kind == "interleave":
        mode = MPOL_INTERLEAVE
        for d in policy.domains:
            mask[d // 64] |= 1 << (d % 64)
        rc = libc.syscall(_nr("set_mempolicy"), mode, mask, ctypes.c_ulong(_MASK_BITS + 1))
    else:
        rc = libc.syscall(_nr("set_mempolicy"), MPOL_DEFAULT, None, ctypes.c_ulong(0))
    if rc != 0:
        err = ctypes.get_errno()
        raise MemoryPolicyError(err, f"set_mempolicy({policy}): {os.strerror(err)}")


def get_memory_policy() -> MemoryPolicy:
    libc = _libc()
    words = _MASK_BITS // 64
    mask = (ctypes.c_ulong * words)()
    mode = ctypes.c_int(0)
    rc = libc.syscall(_nr("get_mempolicy"), ctypes.byref(mode), mask, ctypes.c_ulong(_MASK_BITS + 1),
                      None, ctypes.c_ulong(0))
    if rc != 0:
        err = ctypes.get_errno()
        raise MemoryPolicyError(err, f"get_mempolicy: {os.strerror(err)}")
    if mode.value == MPOL_INTERLEAVE:
        domains = tuple(i for i in range(_MASK_BITS) if mask[i // 64] >> (i % 64) & 1)
        return MemoryPolicy("interleave", domains)
    return MemoryPolicy()
