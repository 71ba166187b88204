"""Backend selection for the hot loops: compiled extension if built, else pure Python.

Set MFGEN_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import os

if os.environ.get("MFGEN_PURE_PYTHON", "") not in ("", "0"):
    from ._pycore import LRUCache, ReuseTails

    BACKEND = "python"
else:
    try:
        from ._core import LRUCache, ReuseTails

        BACKEND = "compiled"
    except ImportError:
        from ._pycore import LRUCache, ReuseTails

        BACKEND = "python"

__all__ = ["BACKEND", "LRUCache", "ReuseTails"]
