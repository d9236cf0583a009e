import warnings

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the DTW kernel if a compiler is available; fall back otherwise.

    The package works without the extension (a pure-Python DTW implementation
    is selected at import time), so a failed compile should not block install.
    """

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            warnings.warn(f"skipping compiled DTW kernel: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            warnings.warn(f"skipping compiled DTW kernel {ext.name}: {exc}")


try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "sponspeech.evaluation._dtw_core",
                ["src/sponspeech/evaluation/_dtw_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:  # pragma: no cover - Cython missing at build time
    extensions = []

setup(
    ext_modules=extensions,
    cmdclass={"build_ext": optional_build_ext},
)
