"""Build script: compiles the optional fast-kernel extension.

The package is fully functional without the extension (a pure-Python
backend is selected at import time); a failed compile therefore only
costs speed, never functionality.  Set VAKDIRAC_NO_EXT=1 to skip the
extension build entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: fast-kernel extension not built ({exc}); "
                  "falling back to pure-Python kernels")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: could not compile {ext.name} ({exc}); "
                  "falling back to pure-Python kernels")


ext_modules = []
if not os.environ.get("VAKDIRAC_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "vakdirac._kernels._core",
                    ["src/vakdirac/_kernels/_core.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:  # pragma: no cover - Cython missing
        print("warning: Cython not available; building without fast kernels")

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
