import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: if the build fails the package still
# installs and attgan3d.kernels falls back to the numpy implementation.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "attgan3d.kernels._conv_ext",
                sources=["src/attgan3d/kernels/_conv_ext.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level="3",
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
