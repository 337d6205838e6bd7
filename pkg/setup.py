import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("AFGUIDE_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext = Extension(
            "afguide._core._kernels",
            ["src/afguide/_core/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
        ext_modules = cythonize([ext], language_level="3")
    except ImportError:
        # No Cython/numpy at build time: install the pure-python package;
        # the numpy kernel backend is selected at import.
        ext_modules = []

setup(ext_modules=ext_modules)
