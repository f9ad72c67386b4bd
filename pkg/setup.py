"""Builds the optional compiled core; the package works without it."""
import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # plain install: no core, the Python engine is used
    cythonize = None


def extensions():
    if cythonize is None or os.environ.get("NWRKV_NO_EXT"):
        return []
    ext = Extension(
        "nwrkv._core",
        ["src/nwrkv/_core.pyx", "src/nwrkv/csrc/kernel.c"],
        include_dirs=["src/nwrkv/csrc"],
        extra_compile_args=["-O2", "-std=gnu11", "-mcx16", "-pthread"],
        extra_link_args=["-pthread"],
        libraries=["m"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
