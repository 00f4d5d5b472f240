import os

import numpy as np
from setuptools import Extension, setup

# FT_NO_EXT=1 installs the pure-Python package only.
ext_modules = []
if not os.environ.get("FT_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "forward_thinking._kernels",
                ["src/forward_thinking/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no FMA contraction: keeps results bit-identical to numpy fallback
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
