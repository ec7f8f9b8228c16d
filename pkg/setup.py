import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SHFORGE_NO_EXT") != "1":
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "shforge._raster_ext",
            ["src/shforge/_raster_ext.pyx"],
            include_dirs=[np.get_include()],
            # no FMA contraction: results must match the numpy fallback bit for bit
            extra_compile_args=["-O3", "-ffp-contract=off"],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
