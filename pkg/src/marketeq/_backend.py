"""Kernel backend selection.

Uses the compiled extension when it imported cleanly, the NumPy fallback
otherwise. MARKETEQ_BACKEND=py forces the fallback; MARKETEQ_BACKEND=c
requires the extension and raises if it is missing.
"""

import os

from . import _kernels_py

_choice = os.environ.get("MARKETEQ_BACKEND", "").lower()

if _choice in ("py", "numpy", "python"):
    _impl = _kernels_py
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        if _choice in ("c", "compiled"):
            raise
        _impl = _kernels_py
        BACKEND = "numpy"

nested_spend = _impl.nested_spend
flat_ces_spend = _impl.flat_ces_spend
ces_mirror_update = _impl.ces_mirror_update
