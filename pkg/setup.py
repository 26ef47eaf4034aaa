"""Build script for the compiled stepping kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a missing Cython toolchain only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sdemoments._kernels",
                ["src/sdemoments/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                # contraction off: keeps multiply/add rounding identical to
                # the numpy fallback on every architecture
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
