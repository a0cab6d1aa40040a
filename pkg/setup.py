"""Build script for the optional compiled kernels.

Metadata lives in pyproject.toml; this file only declares the Cython
extension.  Without Cython or a C compiler the package still installs and
falls back to the numpy kernels.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:  # pragma: no cover
    pass
else:
    ext_modules = cythonize(
        [Extension("calderon_lab._kernels",
                   ["src/calderon_lab/_kernels.pyx"],
                   include_dirs=[np.get_include()],
                   extra_compile_args=["-O3"],
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
