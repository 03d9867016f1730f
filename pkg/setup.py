# Builds the optional compiled kernel core. The package works without it:
# driftlab._kernels falls back to the numpy backend when the extension is
# missing or fails to build (python setup.py / pip install still succeed).
import os

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "driftlab._kernels._ckernels",
                ["src/driftlab/_kernels/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    if os.environ.get("DRIFTLAB_REQUIRE_COMPILED"):
        raise
    print(f"driftlab: building without compiled kernels ({exc})")

setup(ext_modules=ext_modules)
