"""Hot loops behind the warp engine and feature matching.

The compiled Cython extension is used when it has been built; otherwise the
numpy implementation takes over. Set ``COVOS_PURE_PYTHON=1`` to force the
fallback. Both backends are importable directly for comparison.
"""
from __future__ import annotations

import os

from . import _fallback as numpy_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("COVOS_PURE_PYTHON", "") in ("", "0"):
    active = compiled_backend
    BACKEND = "cython"
else:
    active = numpy_backend
    BACKEND = "numpy"


def backends() -> dict:
    out = {"numpy": numpy_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out


def warp(*args, **kwargs):
    return active.warp(*args, **kwargs)


def feature_match(*args, **kwargs):
    return active.feature_match(*args, **kwargs)
