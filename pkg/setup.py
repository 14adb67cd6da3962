"""Build hook for the optional compiled statistics kernels.

The package is fully functional without the extension (a pure-Python
backend is selected at import time); set ILWS_FORGE_SKIP_EXT=1 to force
a pure-Python install on machines without a C toolchain.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ILWS_FORGE_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "ilws_forge.stats._ckernels",
                    ["src/ilws_forge/stats/_ckernels.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
