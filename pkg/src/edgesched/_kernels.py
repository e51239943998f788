"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``EDGESCHED_PURE_PYTHON=1`` is set, the numpy/Python reference kernels are used.
"""

import os

from edgesched import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("EDGESCHED_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from edgesched import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

adam_update = _impl.adam_update
polyak_update = _impl.polyak_update
slot_schedule = _impl.slot_schedule
