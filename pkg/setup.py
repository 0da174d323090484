"""Build script for the compiled kernel extension.

The hot layer kernels (conv2d, max pooling, local response normalization)
ship as a Cython extension; signet._kernels falls back to the pure-numpy
backend at import time when the extension is unavailable.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "signet._kernels._cykernels",
        ["src/signet/_kernels/_cykernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-march=native", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
