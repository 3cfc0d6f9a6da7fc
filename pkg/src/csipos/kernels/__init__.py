"""Hot-loop kernels with a compiled core and a NumPy fallback.

At import time the Cython extension (``csipos.kernels._core``) is preferred;
if it is missing the NumPy implementation takes over transparently. The
``CSIPOS_KERNELS`` environment variable pins a backend (``compiled`` or
``python``), and :func:`use_backend` switches at runtime, which tests use to
pin golden values to one backend.

Both backends are bit-deterministic run to run; across backends, results
agree to floating-point reassociation only.
"""

from __future__ import annotations

import contextlib
import os

from . import _reference

try:
    from . import _core
except ImportError:
    _core = None

_BACKENDS = {"python": _reference}
if _core is not None:
    _BACKENDS["compiled"] = _core


def _default_backend() -> str:
    forced = os.environ.get("CSIPOS_KERNELS", "").strip().lower()
    if forced:
        if forced not in ("compiled", "python"):
            raise ValueError(f"CSIPOS_KERNELS must be 'compiled' or 'python', got {forced!r}")
        if forced not in _BACKENDS:
            raise ImportError("CSIPOS_KERNELS=compiled but the extension is not built")
        return forced
    return "compiled" if "compiled" in _BACKENDS else "python"


_active = _BACKENDS[_default_backend()]


def active_backend() -> str:
    return _active.BACKEND_NAME


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def use_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    _active = _BACKENDS[name]


@contextlib.contextmanager
def backend(name: str):
    """Temporarily switch the kernel backend."""
    previous = active_backend()
    use_backend(name)
    try:
        yield
    finally:
        use_backend(previous)


def conv2d_forward(x, w, b, pad):
    return _active.conv2d_forward(x, w, b, pad)


def conv2d_backward(x, w, gy, pad):
    return _active.conv2d_backward(x, w, gy, pad)


def avgpool2x2_forward(x):
    return _active.avgpool2x2_forward(x)


def avgpool2x2_backward(gy, h, w):
    return _active.avgpool2x2_backward(gy, h, w)
