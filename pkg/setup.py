import numpy as np
from setuptools import setup, Extension

try:
    from Cython.Build import cythonize
    ext_modules = cythonize(
        [Extension("clkinetic._core", ["src/clkinetic/_core.pyx"],
                   include_dirs=[np.get_include()], optional=True)],
        language_level=3,
    )
except ImportError:  # build without the extension, numpy fallback is used
    ext_modules = []

setup(ext_modules=ext_modules)
