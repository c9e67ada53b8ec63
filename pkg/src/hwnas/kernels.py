"""Selects the compiled sorting kernel when available.

Set HWNAS_PURE_PYTHON=1 to force the numpy fallback (useful for the kernel
benchmark and for debugging without a compiler).
"""

import os

if os.environ.get("HWNAS_PURE_PYTHON") == "1":
    from hwnas._ops_py import nondominated_rank

    BACKEND = "python"
else:
    try:
        from hwnas._ops import nondominated_rank

        BACKEND = "compiled"
    except ImportError:
        from hwnas._ops_py import nondominated_rank

        BACKEND = "python"

__all__ = ["nondominated_rank", "BACKEND"]
