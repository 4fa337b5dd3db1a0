"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so any failure here degrades to the pure build instead of
aborting the install.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/amfd/_ckernels.pyx",
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
    for ext in ext_modules:
        ext.extra_compile_args = ["-O3", "-ffp-contract=off"]
except ImportError:
    pass

setup(ext_modules=ext_modules)
