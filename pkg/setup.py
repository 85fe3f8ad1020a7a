import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SONARRAY_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("sonarray._kernels._sdm", ["src/sonarray/_kernels/_sdm.pyx"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
