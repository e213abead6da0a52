"""Build script for the optional compiled attention kernels.

The package is fully functional without the extension (a numpy fallback is
selected at import time); building it just makes the hot attention loops
faster.  If Cython or a C compiler is missing the build degrades to
pure-python silently.
"""

import sys

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    np = None
    cythonize = None


def extensions():
    if cythonize is None or np is None:
        print("hexflow: Cython/numpy unavailable, skipping compiled kernels", file=sys.stderr)
        return []
    exts = [
        Extension(
            "hexflow.backend._kernels",
            ["src/hexflow/backend/_kernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3", "-ffast-math", "-funroll-loops"],
            libraries=["mvec", "m"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    return cythonize(exts, compiler_directives={"language_level": "3"})


setup(ext_modules=extensions())
