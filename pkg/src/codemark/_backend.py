"""Kernel backend selection.

The compiled extension is used when importable; the numpy fallback
otherwise. Set CODEMARK_PURE_PY=1 to force the fallback (used by the
benchmark and the backend-equivalence tests).
"""
from __future__ import annotations

import os

if os.environ.get("CODEMARK_PURE_PY"):
    from . import _kernels_py as impl
else:
    try:
        from . import _kernels as impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as impl

BACKEND = impl.BACKEND_NAME

mix64 = impl.mix64
hash_bit_scalar = impl.hash_bit_scalar
pair_prefixes = impl.pair_prefixes
wm_fill = impl.wm_fill
score_range = impl.score_range
beats_range = impl.beats_range


def backend_name() -> str:
    return BACKEND
