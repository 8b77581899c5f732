"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (numpy fallback,
selected at import); any build failure therefore only prints a warning.
"""

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as err:  # missing compiler, etc.
            print("warning: skipping kernel extension build (%s)" % err)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as err:
            print("warning: could not build %s (%s)" % (ext.name, err))


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError as err:
        print("warning: kernel extension skipped (%s)" % err)
        return []
    from setuptools import Extension

    ext = Extension(
        "stegalift._kernels",
        sources=["src/stegalift/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
