from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "ergodicmm._kernels",
        ["src/ergodicmm/_kernels.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
