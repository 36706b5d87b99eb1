"""Build the optional compiled pieces.

Both are optional: without a C toolchain or Cython the package still
installs and falls back to numpy kernels and an on-demand shim build.
"""
import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: skipping compiled extensions ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


def extensions():
    exts = [
        # LD_PRELOAD shim; never imported by Python.
        Extension(
            "nodeperf.pin._pinshim",
            sources=["src/nodeperf/pin/pinshim.c"],
            extra_compile_args=["-O2", "-fvisibility=default"],
            libraries=["dl", "pthread"],
        ),
    ]
    if os.environ.get("NODEPERF_NO_CYTHON"):
        return exts
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return exts
    kernels = Extension(
        "nodeperf.bench._kernels",
        sources=["src/nodeperf/bench/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return exts + cythonize([kernels], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
