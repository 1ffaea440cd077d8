"""Kernel selection: the compiled extension when importable, numpy otherwise.

Set ``POLREF_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

try:
    if os.environ.get("POLREF_PURE"):
        raise ImportError("pure-Python kernels requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    """Module exposing ``eval_chains``; ``None`` selects the default backend."""
    return BACKENDS[name or BACKEND]


def eval_chains(rows, chain_start, chain_end, packets, default=0):
    return BACKENDS[BACKEND].eval_chains(rows, chain_start, chain_end, packets, default)
