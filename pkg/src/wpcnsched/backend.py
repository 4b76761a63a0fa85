"""Solver kernel selection: compiled extension when available, pure Python otherwise.

The default is resolved once at import (override with WPCNSCHED_BACKEND=python
or =cython); `use_backend` switches at runtime, e.g. to benchmark one against
the other.
"""

import os

from . import _speedups_py

try:
    from . import _speedups
    HAVE_EXTENSION = True
except ImportError:
    _speedups = None
    HAVE_EXTENSION = False

_BACKENDS = {"python": _speedups_py}
if HAVE_EXTENSION:
    _BACKENDS["cython"] = _speedups

_active = None


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def use_backend(name: str):
    """Select the kernel module by name ('python' or 'cython'); returns it."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _active = _BACKENDS[name]
    return _active


def active_backend():
    return _active


def active_backend_name() -> str:
    return _active.BACKEND_NAME


_requested = os.environ.get("WPCNSCHED_BACKEND", "").strip().lower()
if _requested:
    use_backend(_requested)
else:
    use_backend("cython" if HAVE_EXTENSION else "python")
