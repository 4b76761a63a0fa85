"""Build the optional compiled solver core.

The extension accelerates the scalar subproblem / bisection kernels; the
package falls back to the pure-Python implementation when the extension is
missing, so a failed build is not fatal:

    python setup.py build_ext --inplace
"""

from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "wpcnsched._speedups",
                ["src/wpcnsched/_speedups.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
