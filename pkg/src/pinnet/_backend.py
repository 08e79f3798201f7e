"""Kernel backend selection.

The compiled extension is preferred. Set ``PINNET_BACKEND=python`` to force
the NumPy fallback, or ``PINNET_BACKEND=c`` to fail loudly when the
extension is missing.
"""
import os

from . import _pykernels

_choice = os.environ.get("PINNET_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _pykernels
    name = "python"
else:
    try:
        from . import _ckernels as kernels
        name = "c"
    except ImportError:
        if _choice == "c":
            raise
        kernels = _pykernels
        name = "python"


def available():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.insert(0, "c")
    except ImportError:
        pass
    return names


def load(backend):
    if backend == "python":
        return _pykernels
    if backend == "c":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {backend!r}")
