"""Backend selection for the pointwise kernels.

The compiled extension ``_kernels`` is used when it imports; otherwise, or
when the environment variable ``DUALFLOW_PURE_PYTHON`` is set to a
non-empty value other than ``0``, the numpy fallback is used.
"""
import os

from . import _kernels_py

_force_py = os.environ.get("DUALFLOW_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

spd_solve = _impl.spd_solve
min_eigenvalues = _impl.min_eigenvalues

__all__ = ["BACKEND", "spd_solve", "min_eigenvalues"]
