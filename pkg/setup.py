"""Builds the optional compiled kernels.

The package works without the extension (a numpy fallback is selected at
import time), so the build degrades gracefully when Cython or a C compiler
is unavailable. Set BIORAG_SKIP_EXT=1 to force a pure build.
"""

import os

from setuptools import setup


def _extensions():
    if os.environ.get("BIORAG_SKIP_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "biorag.kernels._ckern",
        ["src/biorag/kernels/_ckern.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
