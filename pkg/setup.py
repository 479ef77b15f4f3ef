"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time); compilation failures therefore downgrade to a
warning instead of aborting the install.
"""

import sys

from setuptools import setup

ext_modules = []
cmdclass = {}

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = [
        Extension(
            "smogcast.neuro._ckernels",
            sources=["src/smogcast/neuro/_ckernels.pyx"],
            extra_compile_args=["-O3"],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})
except ImportError:
    print("smogcast: Cython unavailable, building pure-Python package", file=sys.stderr)


class _OptionalBuildExt:
    """Mixin turning extension build failures into warnings."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any compiler failure is non-fatal
            print(f"smogcast: extension build failed ({exc}); "
                  "falling back to the NumPy backend", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"smogcast: building {ext.name} failed ({exc}); "
                  "falling back to the NumPy backend", file=sys.stderr)


if ext_modules:
    from setuptools.command.build_ext import build_ext

    class OptionalBuildExt(_OptionalBuildExt, build_ext):
        pass

    cmdclass["build_ext"] = OptionalBuildExt

setup(ext_modules=ext_modules, cmdclass=cmdclass)
