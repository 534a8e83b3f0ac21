import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # source-only install runs on the numpy kernel
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "dktgen._rnn",
                ["src/dktgen/_rnn.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
