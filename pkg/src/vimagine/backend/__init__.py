"""Convolution kernel backend selection.

Two interchangeable implementations exist:

* ``native`` -- Cython direct loops, compiled at install time.
* ``reference`` -- numpy im2col (patch matrix) fallback.

The native backend is used when its extension module imported cleanly;
set ``VIMAGINE_BACKEND=reference`` or ``=native`` to force one.  Both
must agree on every routine (see tests/test_backend.py), so the choice
only affects speed.
"""

import os

from . import reference

try:
    from . import _native
except ImportError:
    _native = None

_requested = os.environ.get("VIMAGINE_BACKEND", "").strip().lower()
if _requested == "reference":
    _impl = reference
elif _requested == "native":
    if _native is None:
        raise ImportError(
            "VIMAGINE_BACKEND=native but the compiled extension is not available"
        )
    _impl = _native
elif _requested:
    raise ImportError(f"unknown VIMAGINE_BACKEND value: {_requested!r}")
else:
    _impl = _native if _native is not None else reference

BACKEND = _impl.NAME

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
conv3d_forward = _impl.conv3d_forward
conv3d_backward = _impl.conv3d_backward


def available_backends():
    mods = {"reference": reference}
    if _native is not None:
        mods["native"] = _native
    return mods
