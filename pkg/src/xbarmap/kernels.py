"""Selects the compiled relaxation kernel when available.

Set ``XBARMAP_PURE_PYTHON=1`` to force the NumPy fallback.
"""
import os

from . import _relax_py

BACKEND = "python"
relax_solve = _relax_py.relax_solve

if os.environ.get("XBARMAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _relax
    except ImportError:
        pass
    else:
        relax_solve = _relax.relax_solve
        BACKEND = "cython"
