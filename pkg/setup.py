"""Build script: compiles the optional native kernels, falling back to pure Python.

The extension is an accelerator only; every kernel has a numpy fallback in
rhythmsim.kernels._fallback, so a failed compile must never fail the install.
"""

import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that downgrades compiler failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain, ...
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            "WARNING: native kernels were not built (%s); "
            "rhythmsim will use the pure-Python fallback." % exc,
            file=sys.stderr,
        )


def extensions():
    if os.environ.get("RHYTHMSIM_NO_NATIVE") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        print("WARNING: %s; building without native kernels." % exc, file=sys.stderr)
        return []
    ext = Extension(
        "rhythmsim.kernels._native",
        ["src/rhythmsim/kernels/_native.pyx"],
        include_dirs=[numpy.get_include()],
        # No fast-math / fma contraction: the fallback must stay bit-identical.
        extra_compile_args=["-O2", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
