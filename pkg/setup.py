"""Build script for the optional compiled geometry core.

The package is pure Python except for ``langgrasp._geomcore``, a small Cython
extension holding the polygon-clipping and Monte-Carlo sampling kernels.  When
Cython or a C compiler is unavailable the extension is simply skipped and the
package falls back to the plain-Python kernels at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "langgrasp._geomcore",
                sources=["src/langgrasp/_geomcore.pyx"],
                # fp-contract off keeps the compiled kernels bit-compatible
                # with the pure-Python fallback (no FMA fusion).
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level="3str",
    )

setup(ext_modules=ext_modules)
