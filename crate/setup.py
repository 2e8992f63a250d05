"""Builds the revwalk extension module by delegating to cargo.

Neither maturin nor setuptools-rust is assumed; the cdylib produced by
`cargo build --release -p revwalk-py --features extension-module` is copied
to wherever setuptools wants the extension. Use
`pip install -e . --no-build-isolation`.
"""

import pathlib
import shutil
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

ROOT = pathlib.Path(__file__).resolve().parent


class CargoBuildExt(build_ext):
    def build_extension(self, ext):
        subprocess.check_call(
            [
                "cargo",
                "build",
                "--release",
                "-p",
                "revwalk-py",
                "--features",
                "extension-module",
            ],
            cwd=ROOT,
        )
        suffix = {"win32": ".dll", "darwin": ".dylib"}.get(sys.platform, ".so")
        prefix = "" if sys.platform == "win32" else "lib"
        built = ROOT / "target" / "release" / f"{prefix}revwalk{suffix}"
        dest = pathlib.Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, dest)


setup(
    ext_modules=[Extension("revwalk", sources=[])],
    cmdclass={"build_ext": CargoBuildExt},
)
