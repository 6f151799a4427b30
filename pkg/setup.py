"""Build the optional compiled simulation core.

The package works without it: ``superscale.sim`` falls back to the
pure-Python kernels when the extension cannot be built or imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SUPERSCALE_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "superscale.sim._ccore",
                    ["src/superscale/sim/_ccore.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
