"""Build script: compiles the optional fast conv kernels.

The package works without the extension (a numpy fallback is selected at
import time); set GLYPHFORGE_NO_EXT=1 to skip compilation entirely.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("GLYPHFORGE_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "glyphforge.tensor.kernels._fastkernels",
                    ["src/glyphforge/tensor/kernels/_fastkernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # pragma: no cover - build-env dependent
        print(f"glyphforge: skipping compiled kernels ({exc}); numpy fallback will be used")

setup(ext_modules=ext_modules)
