"""Backend selection for the rollout kernels.

The compiled Cython core is preferred when importable; the numpy twin is the
fallback. Override with TETHERPLAN_BACKEND=numpy or =compiled (the latter
raises if the extension is missing rather than silently degrading).
"""

import os

from . import numpy_ref

_requested = os.environ.get("TETHERPLAN_BACKEND", "").strip().lower()

if _requested not in ("", "numpy", "compiled"):
    raise ValueError(
        f"TETHERPLAN_BACKEND={_requested!r}: expected 'numpy' or 'compiled'")

impl = numpy_ref
if _requested in ("", "compiled"):
    try:
        from . import _core as _compiled
    except ImportError:
        if _requested == "compiled":
            raise
    else:
        impl = _compiled

BACKEND = impl.NAME

rollout_closed_loop = impl.rollout_closed_loop
rollout_adjoint = impl.rollout_adjoint
rollout_open_loop = impl.rollout_open_loop


def backend_name() -> str:
    return BACKEND
