"""Select the kernel backend at import time.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. ``CFDBAL_BACKEND=python`` forces the fallback and
``CFDBAL_BACKEND=compiled`` makes a missing extension an ImportError.
"""

from __future__ import annotations

import os

from . import _core_py

_requested = os.environ.get("CFDBAL_BACKEND", "").strip().lower()

if _requested == "python":
    core = _core_py
else:
    try:
        from . import _core as core  # type: ignore[attr-defined,no-redef]
    except ImportError:
        if _requested == "compiled":
            raise
        core = _core_py

BACKEND: str = core.BACKEND


def get_backend(name: str | None = None):
    """Return a kernel module by name (``"compiled"``/``"python"``), or the active one."""
    if name is None:
        return core
    if name == "python":
        return _core_py
    if name == "compiled":
        from . import _core  # type: ignore[attr-defined]

        return _core
    raise ValueError(f"unknown backend {name!r}")
