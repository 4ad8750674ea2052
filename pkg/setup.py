"""Build script for the optional compiled kernel extension.

The package works without the extension (the numpy backend is selected at
import time), so a failed compile degrades gracefully to a pure install.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("GVR_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "gvr.kernels._fast",
                    ["src/gvr/kernels/_fast.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # pragma: no cover - build-env dependent
        print(f"gvr: skipping compiled kernels ({exc}); numpy backend will be used")

setup(ext_modules=ext_modules)
