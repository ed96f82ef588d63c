"""
Thin wrapper around the setuptools build backend.

The top-level setup.py is an environment bootstrap script (writes
backend/.env and pip-installs requirements), not a packaging script, so the
backend must not exec it. Metadata comes from pyproject.toml instead.
"""

from setuptools import build_meta as _orig
from setuptools import setup as _setup


class _Backend(_orig._BuildMetaBackend):
    def run_setup(self, setup_script='setup.py'):
        _setup()


_backend = _Backend()

get_requires_for_build_wheel = _backend.get_requires_for_build_wheel
get_requires_for_build_sdist = _backend.get_requires_for_build_sdist
get_requires_for_build_editable = _backend.get_requires_for_build_editable
prepare_metadata_for_build_wheel = _backend.prepare_metadata_for_build_wheel
prepare_metadata_for_build_editable = _backend.prepare_metadata_for_build_editable
build_wheel = _backend.build_wheel
build_sdist = _backend.build_sdist
build_editable = _backend.build_editable
