"""Build script: compiles the optional native scoring kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so any build failure here degrades gracefully to
a pure-Python install instead of aborting.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("COOP_RAG_SKIP_NATIVE") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "coop_rag.kernels._native",
                    ["src/coop_rag/kernels/_native.pyx"],
                    include_dirs=[np.get_include()],
                    # fast-math licenses the reassociation the dot-product
                    # loops need to vectorize; no NaN/inf flows through the
                    # kernels by contract.
                    extra_compile_args=["-O3", "-ffast-math", "-funroll-loops"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "initializedcheck": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
