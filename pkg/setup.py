"""Build script for the optional compiled posing kernel.

    pip install -e . --no-build-isolation

builds ``stagekin._kernels._fk_core`` when Cython and a C compiler are
available. Without them the package installs with the numpy fallback.
"""

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "stagekin._kernels._fk_core",
                ["src/stagekin/_kernels/_fk_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
        quiet=True,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
