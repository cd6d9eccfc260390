import sys

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; linalg falls back to numpy
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "hdnn._kernels",
                ["src/hdnn/_kernels.pyx"],
                include_dirs=[np.get_include(), "src/hdnn"],
                # no -ffast-math: the accumulation order is part of the contract
                extra_compile_args=[] if sys.platform == "win32" else ["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
