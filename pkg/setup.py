from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "codemark._kernels",
                sources=["src/codemark/_kernels.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython at build time: install pure-Python only, the kernel
    # fallback in codemark._backend takes over at import.
    ext_modules = []

setup(ext_modules=ext_modules)
