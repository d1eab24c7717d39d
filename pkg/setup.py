import os

import numpy
from setuptools import Extension, setup


def get_extensions():
    if os.environ.get("PERTURBED_LTH_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "perturbed_lth._ckernels",
                ["src/perturbed_lth/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=get_extensions())
