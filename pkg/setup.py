"""Build script. Compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); set SVBF_NO_EXT=1 to skip compilation explicitly.
"""

import os
import sys

from setuptools import setup

ext_modules = []
if not os.environ.get("SVBF_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "svbf._kernels._ckern",
                    ["src/svbf/_kernels/_ckern.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        sys.stderr.write(f"svbf: building without compiled kernels ({exc})\n")
        ext_modules = []

setup(ext_modules=ext_modules)
