import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "trajdistill.nn.kernels._attn_cy",
                ["src/trajdistill/nn/kernels/_attn_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

# The compiled kernels are optional: the package falls back to the numpy
# backend when the extension is absent (see trajdistill.nn.kernels).
setup(ext_modules=extensions)
