"""Pick the simulation kernels: compiled when available, pure Python otherwise.

Set ``SUPERSCALE_BACKEND=python`` to force the fallback, or
``SUPERSCALE_BACKEND=compiled`` to fail loudly if the extension is missing.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _pycore


def _load() -> tuple[ModuleType, str]:
    want = os.environ.get("SUPERSCALE_BACKEND", "auto").lower()
    if want not in ("auto", "python", "compiled"):
        raise ValueError(f"SUPERSCALE_BACKEND must be auto, python or compiled; got {want!r}")
    if want == "python":
        return _pycore, "python"
    try:
        from . import _ccore
    except ImportError:
        if want == "compiled":
            raise
        return _pycore, "python"
    return _ccore, "compiled"


core, BACKEND = _load()


def get_core(name: str | None = None) -> ModuleType:
    """Kernel module by name (``"python"``, ``"compiled"``) or the default."""
    if name is None:
        return core
    if name == "python":
        return _pycore
    if name == "compiled":
        from . import _ccore

        return _ccore
    raise ValueError(f"unknown backend {name!r}")


def compiled_available() -> bool:
    try:
        from . import _ccore  # noqa: F401
    except ImportError:
        return False
    return True
