"""Builds the optional compiled physics kernel.

The package works without it: ``amploco.backend`` falls back to the numpy
kernel when the extension is missing.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("AMPLOCO_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "amploco._physics_ext",
                    ["src/amploco/_physics_ext.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O2", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        print("Cython/numpy unavailable: installing the pure-Python kernel only")

setup(ext_modules=ext_modules)
