"""Kernel implementation selected at import: the compiled module when it is
built, the numpy fallback otherwise. ``NODEPERF_KERNELS=numpy`` forces the
fallback."""

import os

from . import _fallback

if os.environ.get("NODEPERF_KERNELS", "").lower() == "numpy":
    impl = _fallback
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as impl
        BACKEND = "cython"
    except ImportError:
        impl = _fallback
        BACKEND = "numpy"

fill = impl.fill
copy = impl.copy
triad = impl.triad
