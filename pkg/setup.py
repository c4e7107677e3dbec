"""Build script: compiles the Cython kernel core when possible.

The package works without the extension (a pure-numpy backend is selected
at import time), so a failed extension build must not fail the install.
"""

import os

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    compile_args = ["-O3", "-fopenmp"]
    if os.environ.get("PAONKIT_NATIVE", "") == "1":
        # opt-in: tune for the build machine (non-portable binaries)
        compile_args.append("-march=native")

    ext_modules = cythonize(
        [
            Extension(
                "paonkit.kernels._ckernels",
                sources=["src/paonkit/kernels/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=compile_args,
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    import sys

    print(f"paonkit: skipping Cython extension build ({exc}); "
          "the numpy fallback backend will be used.", file=sys.stderr)

setup(ext_modules=ext_modules)
