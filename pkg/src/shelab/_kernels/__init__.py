"""Hot kernels with a compiled core and a numpy fallback.

The Cython extension ``_ext`` is used when it was built; otherwise, or when
``SHELAB_PURE_PYTHON=1`` is set, the numpy module ``_fallback`` is used.
Both expose ``philox4x32``, ``normals``, ``spectral_step`` and
``spectral_step_rows`` with identical signatures. Callers go through
:func:`active` so the backend can be switched at runtime (tests and the
benchmark do this).
"""

import os

from . import _fallback

try:
    from . import _ext
except ImportError:  # extension not built
    _ext = None

_BACKENDS = {"numpy": _fallback}
if _ext is not None:
    _BACKENDS["cython"] = _ext

if os.environ.get("SHELAB_PURE_PYTHON", "") not in ("", "0") or _ext is None:
    _active = _fallback
else:
    _active = _ext


def available():
    return sorted(_BACKENDS)


def active():
    return _active


def backend_name():
    return _active.BACKEND


def set_backend(name):
    """Select ``"cython"`` or ``"numpy"``; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available()})")
    prev = _active.BACKEND
    _active = _BACKENDS[name]
    return prev
