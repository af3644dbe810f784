import os

from setuptools import Extension, setup

# The compiled metric kernels are optional: without them the package falls
# back to the pure-numpy implementations at import time.  Set
# DEPTHCOD_SKIP_EXT=1 to force a pure-Python build.
ext_modules = []
if os.environ.get("DEPTHCOD_SKIP_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "depthcod.metrics._kernels",
                    ["src/depthcod/metrics/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
