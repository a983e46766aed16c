import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# optional=True: a failed compile still installs the package; the
# pure-numpy backend is selected at import time instead.
extensions = [
    Extension(
        "cyclic_ukf._kernel",
        ["src/cyclic_ukf/_kernel.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
)
