"""Kernel backend selection.

The compiled extension is preferred; set ``GKG_PURE_PYTHON=1`` to force the
numpy fallback (used by the cross-backend tests and the benchmark).
"""
from __future__ import annotations

import importlib
import os

from . import _pykernels

BACKENDS = {"python": _pykernels}
try:
    BACKENDS["cython"] = importlib.import_module("gkgrec._ckernels")
except ImportError:  # extension not built
    pass

if os.environ.get("GKG_PURE_PYTHON", "") not in ("", "0") or "cython" not in BACKENDS:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = BACKENDS[BACKEND]
k_hop = _impl.k_hop
ppr = _impl.ppr
kruskal = _impl.kruskal
gae = _impl.gae


def get(name: str):
    """Return the kernel module for ``name`` ("python" or "cython")."""
    return BACKENDS[name]
