"""Build script for the optional compiled cost kernel.

The package is pure Python apart from one Cython extension holding the MPC
expected-cost/gradient kernel.  If the extension cannot be built (no
compiler, no Cython) the install proceeds anyway and the package falls back
to the NumPy implementation at import time.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Degrade to the pure NumPy backend instead of failing the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: compiled kernel skipped ({exc}); "
                  "falling back to the NumPy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: building {ext.name} failed ({exc}); "
                  "falling back to the NumPy backend")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - build environment without Cython
        return []
    return cythonize(
        [
            Extension(
                "pvpump._core.cost_kernel",
                ["src/pvpump/_core/cost_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
