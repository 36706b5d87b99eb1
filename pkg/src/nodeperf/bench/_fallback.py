"""numpy versions of the streaming kernels, used when the compiled module
is unavailable. numpy ufuncs release the GIL, so threads still overlap.

The triad runs as two ufunc passes (multiply, then add), which moves more
data than the fused compiled loop; reported bandwidth still uses the
kernel's nominal traffic.
"""

import numpy as np


def fill(a, value, lo, hi):
    a[lo:hi] = value


def copy(a, b, lo, hi, iterations):
    dst, src = a[lo:hi], b[lo:hi]
    for _ in range(iterations):
        np.copyto(dst, src)


def triad(a, b, c, s, lo, hi, iterations):
    dst, bb, cc = a[lo:hi], b[lo:hi], c[lo:hi]
    for _ in range(iterations):
        np.multiply(cc, s, out=dst)
        np.add(dst, bb, out=dst)
