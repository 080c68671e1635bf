"""Builds the optional compiled warp kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a missing compiler or Cython only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "adelreg._kernels._ckern",
                ["src/adelreg/_kernels/_ckern.pyx"],
                include_dirs=[np.get_include()],
                # -ffp-contract=off keeps the compiled kernels bit-identical
                # to the numpy backend (no FMA contraction).
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
