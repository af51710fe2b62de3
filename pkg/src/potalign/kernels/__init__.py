"""Hot kernels: compiled Cython core when built, numpy fallback otherwise.

Set ``POTALIGN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback
if not os.environ.get("POTALIGN_PURE_PYTHON"):
    try:
        from . import _core as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

bilinear_sample = _impl.bilinear_sample
pairwise_hi = _impl.pairwise_hi
diag_window_sums = _impl.diag_window_sums
complete_linkage = _impl.complete_linkage

__all__ = ["BACKEND", "bilinear_sample", "pairwise_hi", "diag_window_sums", "complete_linkage"]
