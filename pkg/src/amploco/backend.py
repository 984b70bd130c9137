"""Selects the physics kernel at import time.

The compiled kernel is used when it was built; ``AMPLOCO_BACKEND=python``
forces the numpy fallback.
"""
import os

from . import _physics_py

kernel = _physics_py
if os.environ.get("AMPLOCO_BACKEND", "").lower() != "python":
    try:
        from . import _physics_ext as kernel  # noqa: F811
    except ImportError:
        kernel = _physics_py

NAME = kernel.BACKEND


def get(name=None):
    """Return a kernel module by name (``"cython"``/``"python"``), default the selected one."""
    if name is None:
        return kernel
    if name == "python":
        return _physics_py
    if name == "cython":
        from . import _physics_ext
        return _physics_ext
    raise ValueError(f"unknown backend {name!r}")
