"""Hot loops, compiled when available.

The Cython extension ``_kernels`` is preferred; the numpy fallback in
``_kernels_py`` is used when it is not built or when ``TICKETPRUNE_PURE_PYTHON``
is set to a non-empty value.
"""
from __future__ import annotations

import os

if os.environ.get("TICKETPRUNE_PURE_PYTHON"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"

select_candidate = _impl.select_candidate
coo_matmul = _impl.coo_matmul
masked_sup_error = _impl.masked_sup_error
brute_force_sup = _impl.brute_force_sup

__all__ = [
    "BACKEND",
    "select_candidate",
    "coo_matmul",
    "masked_sup_error",
    "brute_force_sup",
]
