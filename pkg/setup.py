"""Builds the optional Cython kernel module; the package works without it."""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("POTALIGN_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "potalign.kernels._core",
                    ["src/potalign/kernels/_core.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
