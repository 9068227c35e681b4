import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# VDRATING_PURE=1 skips the extension; the package then runs on _kernels_py.
ext_modules = []
if not os.environ.get("VDRATING_PURE"):
    ext_modules = cythonize(
        [
            Extension(
                "vdrating._kernels",
                ["src/vdrating/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
