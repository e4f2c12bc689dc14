import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cerp._kernels",
                ["src/cerp/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Cython unavailable: install the pure-numpy build; cerp.kernels falls
    # back to the python implementation at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
