"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension: ``spinepipe.kernels``
falls back to a vectorized NumPy implementation when ``_native`` is absent
or fails to build. The extension is therefore marked ``optional``.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "spinepipe.kernels._native",
                sources=["src/spinepipe/kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
