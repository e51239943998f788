import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("EDGESCHED_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "edgesched._ckernels",
                    ["src/edgesched/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # keep a*b+c unfused so results match the numpy fallback bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
