"""Backend selection for the metric hot kernels.

Two interchangeable implementations exist for the threshold sweeps and the
nearest-foreground search: a Cython extension (``_kernels``) built at install
time, and a pure-numpy fallback (``_numpy``).  The compiled one is picked at
import when available; ``DEPTHCOD_METRICS_BACKEND={compiled,numpy}`` forces a
choice, and :func:`use_backend` switches temporarily (used by tests and the
benchmark).
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import _numpy

_BACKENDS = {"numpy": _numpy}

try:
    from . import _kernels  # type: ignore[attr-defined]

    _BACKENDS["compiled"] = _kernels
except ImportError:
    _kernels = None

_requested = os.environ.get("DEPTHCOD_METRICS_BACKEND", "").strip().lower()
if _requested == "":
    _active = "compiled" if "compiled" in _BACKENDS else "numpy"
elif _requested in _BACKENDS:
    _active = _requested
elif _requested == "compiled":
    raise ImportError(
        "DEPTHCOD_METRICS_BACKEND=compiled but the extension is not built; "
        "reinstall without DEPTHCOD_SKIP_EXT or use the numpy backend"
    )
else:
    raise ValueError(f"unknown metrics backend {_requested!r}")


def impl():
    return _BACKENDS[_active]


def backend_name() -> str:
    return _active


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


@contextmanager
def use_backend(name: str):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    previous = _active
    _active = name
    try:
        yield
    finally:
        _active = previous
