"""Build the optional compiled core; the package works without it."""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CFDBAL_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext = Extension(
            "cfdbal._core",
            ["src/cfdbal/_core.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3", "-fno-fast-math"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
        ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
