"""Kernel backend selection.

The compiled extension ``powerdense._kernels`` is used when importable;
otherwise the NumPy reference in ``_ref`` serves as a drop-in fallback.
Set POWERDENSE_KERNELS=compiled|python|auto to force a backend (raises
if 'compiled' is requested but unavailable).
"""

from __future__ import annotations

import os

import numpy as np

from . import _ref

__all__ = ["interp_many", "segment_integrals", "rotation_ode", "backend_name"]

_choice = os.environ.get("POWERDENSE_KERNELS", "auto").lower()
_backend = None
if _choice in ("auto", "compiled"):
    try:
        from .. import _kernels as _backend  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "POWERDENSE_KERNELS=compiled but the extension is not built; "
                "reinstall with the build step or use POWERDENSE_KERNELS=python"
            )
        _backend = None
elif _choice != "python":
    raise ImportError(f"POWERDENSE_KERNELS={_choice!r} is not a valid backend")

_impl = _backend if _backend is not None else _ref


def backend_name() -> str:
    """'compiled' when the extension is active, else 'python'."""
    return "python" if _impl is _ref else "compiled"


def _arr(x, dtype=np.float64):
    return np.ascontiguousarray(x, dtype=dtype)


def interp_many(values, origin, spacing, points):
    points = _arr(np.atleast_2d(points))
    return _impl.interp_many(_arr(values), _arr(origin), _arr(spacing), points)


def segment_integrals(values, origin, spacing, starts, ends, steps):
    return _impl.segment_integrals(
        _arr(values),
        _arr(origin),
        _arr(spacing),
        _arr(np.atleast_2d(starts)),
        _arr(np.atleast_2d(ends)),
        _arr(steps, dtype=np.int64),
    )


def rotation_ode(values, origin, spacing, starts, ends, steps, r0, ls0):
    return _impl.rotation_ode(
        _arr(values),
        _arr(origin),
        _arr(spacing),
        _arr(np.atleast_2d(starts)),
        _arr(np.atleast_2d(ends)),
        _arr(steps, dtype=np.int64),
        _arr(r0),
        _arr(ls0),
    )
