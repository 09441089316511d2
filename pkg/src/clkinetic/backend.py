"""Picks the compiled kernels when available, else the numpy fallback.

Set ``CLKINETIC_BACKEND=python`` to force the fallback.
"""
import os

if os.environ.get("CLKINETIC_BACKEND", "").lower() == "python":
    from clkinetic import _core_py as core
    NAME = "python"
else:
    try:
        from clkinetic import _core as core
        NAME = "cython"
    except ImportError:  # extension not built
        from clkinetic import _core_py as core
        NAME = "python"

i0e = core.i0e
poly_eval = core.poly_eval
poly_exit = core.poly_exit

__all__ = ["NAME", "core", "i0e", "poly_eval", "poly_exit"]
