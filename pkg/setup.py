"""Build script for the optional compiled splatting kernels.

The package works without the extension (a numpy fallback is selected at
import time); compilation failures therefore downgrade to a warning instead
of aborting the install.
"""

import sys

import numpy as np
from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.errors import CCompilerError, ExecError, PlatformError


class optional_build_ext(build_ext):
    """build_ext that tolerates a missing or broken C toolchain."""

    def run(self):
        try:
            super().run()
        except (CCompilerError, ExecError, PlatformError, OSError) as exc:
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except (CCompilerError, ExecError, PlatformError, OSError) as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"WARNING: compiled kernel build failed ({exc}); "
            "falling back to the pure-Python kernels.",
            file=sys.stderr,
        )


try:
    from Cython.Build import cythonize

    extensions = cythonize(
        "src/splatpm/_kernels/_splat_cy.pyx",
        compiler_directives={"language_level": "3"},
    )
    for ext in extensions:
        ext.include_dirs.append(np.get_include())
        ext.extra_compile_args = ["-O3"]
except ImportError:
    extensions = []

setup(ext_modules=extensions, cmdclass={"build_ext": optional_build_ext})
