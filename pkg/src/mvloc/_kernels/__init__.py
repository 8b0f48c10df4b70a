"""Kernel backend selection.

The compiled extension is used when it imports cleanly; otherwise (or when
the environment variable ``MVLOC_PURE_KERNELS`` is set to a non-empty value)
the pure numpy fallback is selected. Both expose the same functions with
identical contracts.
"""

import os

if os.environ.get("MVLOC_PURE_KERNELS"):
    from . import _pure as _impl
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _pure as _impl

BACKEND = _impl.BACKEND_NAME
e1_residual_jac = _impl.e1_residual_jac
e1_value = _impl.e1_value
consensus_scores = _impl.consensus_scores

__all__ = ["BACKEND", "e1_residual_jac", "e1_value", "consensus_scores"]
