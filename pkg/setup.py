import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The native kernels are optional: the package falls back to the numpy
# backend when the extension is absent, so a failed compile must not
# break installation.
extensions = [
    Extension(
        "vimagine.backend._native",
        ["src/vimagine/backend/_native.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"})
    if cythonize
    else []
)
