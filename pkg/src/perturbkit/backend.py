"""Kernel backend selection.

The compiled extension (`perturbkit._core`, Cython) is preferred when
importable; otherwise the NumPy implementation (`perturbkit._purepy`)
takes over with identical semantics. Set PERTURBKIT_BACKEND=python or
PERTURBKIT_BACKEND=compiled to force one; forcing an unavailable
backend raises at import.
"""

import contextlib
import os

from perturbkit import _purepy

_BACKENDS = {"python": _purepy}

try:
    from perturbkit import _core

    _BACKENDS["compiled"] = _core
except ImportError:
    _core = None


def _initial():
    forced = os.environ.get("PERTURBKIT_BACKEND")
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"PERTURBKIT_BACKEND={forced!r} requested but only "
                f"{sorted(_BACKENDS)} are available"
            )
        return _BACKENDS[forced]
    return _BACKENDS.get("compiled", _purepy)


_active = _initial()


def active():
    """The module currently providing the kernels."""
    return _active


def backend_name() -> str:
    return _active.NAME


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


@contextlib.contextmanager
def override(name: str):
    """Temporarily switch kernels (tests and benchmarks)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_BACKENDS)}")
    previous = _active
    _active = _BACKENDS[name]
    try:
        yield _active
    finally:
        _active = previous
