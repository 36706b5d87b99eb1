"""Locate (or build) the preload shim and launch programs under a plan."""

from __future__ import annotations

import hashlib
import os
import shutil
import subprocess
import sys
from pathlib import Path

from .osapi import apply_affinity, apply_memory_policy
from .plan import PinPlan, assign_main, encode_env

__all__ = ["ShimError", "child_setup", "exec_pinned", "pinned_env", "shim_path"]

SOURCE = Path(__file__).with_name("pinshim.c")
LOG_ENV = "NODEPERF_PIN_LOG"


class ShimError(RuntimeError):
    pass


def _cache_dir() -> Path:
    base = os.environ.get("NODEPERF_CACHE") or os.path.join(
        os.environ.get("XDG_CACHE_HOME") or os.path.expanduser("~/.cache"), "nodeperf"
    )
    return Path(base)


def shim_path() -> Path:
    """Path of the shim shared library.

    Prefers the copy built at install time; otherwise compiles the bundled
    source with the system C compiler into a per-user cache.
    """
    for p in sorted(Path(__file__).parent.glob("_pinshim*.so")):
        return p
    source = SOURCE.read_bytes()
    target = _cache_dir() / f"libnodeperf_pin-{hashlib.sha1(source).hexdigest()[:12]}.so"
    if target.exists():
        return target
    cc = os.environ.get("CC") or shutil.which("cc") or shutil.which("gcc")
    if cc is None:
        raise ShimError("no C compiler found to build the pinning shim")
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_suffix(f".{os.getpid()}.tmp")
    proc = subprocess.run(
        [cc, "-O2", "-shared", "-fPIC", "-o", str(tmp), str(SOURCE), "-ldl", "-lpthread"],
        capture_output=True, text=True,
    )
    if proc.returncode != 0:
        raise ShimError(f"building pinning shim failed:\n{proc.stderr}")
    os.replace(tmp, target)
    return target


def pinned_env(plan: PinPlan, env=None) -> dict:
    """Environment for a child that should run under ``plan``."""
    env = dict(os.environ if env is None else env)
    env.update(encode_env(plan))
    preload = str(shim_path())
    if env.get("LD_PRELOAD"):
        preload += ":" + env["LD_PRELOAD"]
    env["LD_PRELOAD"] = preload
    return env


def child_setup(plan: PinPlan):
    """``preexec_fn`` pinning the child's main thread and memory policy."""
    cpu = assign_main(plan)
    policy = plan.memory_policy

    def setup():
        try:
            apply_affinity(cpu)
            if policy.kind != "default":
                apply_memory_policy(policy)
        except OSError as exc:
            sys.stderr.write(f"nodeperf: {exc}\n")
            os._exit(126)

    return setup


def exec_pinned(plan: PinPlan, argv: list[str]) -> None:
    """Replace the current process with ``argv`` running under ``plan``."""
    env = pinned_env(plan)
    apply_affinity(assign_main(plan))
    if plan.memory_policy.kind != "default":
        apply_memory_policy(plan.memory_policy)
    os.execvpe(argv[0], argv, env)
