"""Attention kernel backend, selected once at import time.

The compiled Cython kernels are used when the extension is importable;
otherwise the pure-numpy twin takes over.  Set HEXFLOW_BACKEND=pure or
HEXFLOW_BACKEND=compiled to force a choice (forcing `compiled` raises if
the extension is missing).
"""

from __future__ import annotations

import importlib
import os
import warnings

from . import pure

_choice = os.environ.get("HEXFLOW_BACKEND", "auto").lower()
if _choice not in {"auto", "compiled", "pure"}:
    warnings.warn(f"unknown HEXFLOW_BACKEND={_choice!r}, using auto")
    _choice = "auto"

# Deliberately not `from . import compiled`: inside this very package that
# form would resolve the pre-seeded module attribute instead of importing.
compiled = None
if _choice in ("auto", "compiled"):
    try:
        compiled = importlib.import_module(".compiled", __name__)
    except ImportError:
        if _choice == "compiled":
            raise
        compiled = None

_active = compiled if compiled is not None and _choice != "pure" else pure

sdpa_forward = _active.sdpa_forward
sdpa_backward = _active.sdpa_backward


def backend_name() -> str:
    return _active.NAME


def available_backends() -> list[str]:
    names = ["pure"]
    if compiled is not None:
        names.append("compiled")
    return names


def get_backend(name: str):
    """Explicit module lookup, used by the kernel benchmark."""
    if name == "pure":
        return pure
    if name == "compiled":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        return compiled
    raise ValueError(f"unknown backend {name!r}")
