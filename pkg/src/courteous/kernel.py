"""Objective-kernel backend selection.

The compiled extension is used when it imports; ``COURTEOUS_BACKEND=python``
forces the numpy fallback.
"""
import os

from courteous import _kernel_py

if os.environ.get("COURTEOUS_BACKEND", "").lower() == "python":
    Problem = _kernel_py.Problem
    BACKEND = "python"
else:
    try:
        from courteous._kernel import Problem
        BACKEND = "cython"
    except ImportError:  # extension not built
        Problem = _kernel_py.Problem
        BACKEND = "python"

__all__ = ["Problem", "BACKEND"]
