import os
import sys

from setuptools import setup, Command

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import versioneer

import requirements

cmdclass: dict[str, type[Command]] = versioneer.get_cmdclass()

setup(
    version=versioneer.get_version(),
    cmdclass=cmdclass,
    install_requires=requirements.get_runtime_dependencies(),
)
