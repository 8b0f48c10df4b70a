"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure numpy implementation is
selected at import time), so failure to build it is not fatal for
development installs; run ``pip install -e . --no-build-isolation`` to
compile it in place.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "mvloc._kernels._native",
                ["src/mvloc/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
