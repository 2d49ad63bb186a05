"""Build the optional compiled kernels; the package works without them."""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("stackgda._ckernels", ["src/stackgda/_ckernels.pyx"],
                   include_dirs=[np.get_include()],
                   define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
