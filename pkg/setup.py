import numpy as np
from setuptools import setup, Extension

# The compiled kernels are an optional speedup: if Cython (or a C compiler)
# is unavailable the package falls back to the pure-numpy implementations in
# nimslam.kernels._numpy at import time.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "nimslam.kernels._native",
                ["src/nimslam/kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
