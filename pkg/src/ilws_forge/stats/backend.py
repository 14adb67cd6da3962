"""Kernel backend selection.

The compiled extension is preferred when present; set
ILWS_FORGE_PURE_PYTHON=1 to force the pure-Python backend (used by the
benchmark and by CI runs that skip the C toolchain).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("ILWS_FORGE_PURE_PYTHON") == "1":
    kernels = _kernels_py
else:
    try:
        from . import _ckernels as kernels  # type: ignore[no-redef]
    except ImportError:
        kernels = _kernels_py

BACKEND_NAME: str = kernels.BACKEND_NAME
