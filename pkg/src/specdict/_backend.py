"""Pick the compiled kernels when available, the pure-Python ones otherwise."""

import os

if os.environ.get("SPECDICT_PURE_PYTHON", "") not in ("", "0"):
    from . import _fallback as kernels
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _fallback as kernels
        BACKEND = "python"

schur_eig = kernels.schur_eig
em_integrate = kernels.em_integrate

__all__ = ["BACKEND", "schur_eig", "em_integrate"]
