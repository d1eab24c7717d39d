"""Kernel backend selection.

The compiled extension ``_ckernels`` is preferred; the NumPy twin in
``_pykernels`` is used when the extension was not built or when the
environment variable ``PERTURBED_LTH_PURE`` is set to a non-empty value
other than ``0``.
"""

import os

from . import _pykernels

_force_pure = os.environ.get("PERTURBED_LTH_PURE", "") not in ("", "0")

try:
    if _force_pure:
        raise ImportError("pure backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

merge_sorted = _impl.merge_sorted
best_mask = _impl.best_mask
closest_pair = _impl.closest_pair
overlap_per_shift = _impl.overlap_per_shift

__all__ = [
    "BACKEND",
    "merge_sorted",
    "best_mask",
    "closest_pair",
    "overlap_per_shift",
]
