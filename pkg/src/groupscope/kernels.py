"""Selects the graph-ANN kernel backend at import time.

The compiled ``_hnsw_ext`` module is preferred; the pure-Python ``_hnsw_py``
module is used when the extension is missing or ``GROUPSCOPE_PURE_PYTHON`` is
set. Both expose ``build(vectors, levels, m, m0, ef_construction)`` and
``GraphSearcher(vectors, links, counts, entry).search(q, ef)`` and produce
identical graphs for identical inputs.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _hnsw_py

logger = logging.getLogger(__name__)


def _load_compiled() -> ModuleType | None:
    if os.environ.get("GROUPSCOPE_PURE_PYTHON"):
        return None
    try:
        from . import _hnsw_ext
    except ImportError:
        logger.info("compiled kernels unavailable; using pure-Python fallback")
        return None
    return _hnsw_ext


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("cython" | "python"), default the active one."""
    if name is None:
        name = BACKEND
    if name == "python":
        return _hnsw_py
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]
