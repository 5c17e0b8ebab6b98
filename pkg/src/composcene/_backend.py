"""Kernel backend selection.

Imports the compiled core when it was built, otherwise the NumPy kernels.
COMPOSCENE_BACKEND=python|compiled forces a choice; `auto` (default) prefers
the compiled core.
"""

from __future__ import annotations

import os

from . import _kernels_py
from .errors import ConfigError

try:
    from . import _core as _kernels_c
except ImportError:
    _kernels_c = None

_choice = os.environ.get("COMPOSCENE_BACKEND", "auto").strip().lower()
if _choice in ("", "auto"):
    kernels = _kernels_c if _kernels_c is not None else _kernels_py
elif _choice in ("compiled", "cython", "c"):
    if _kernels_c is None:
        raise ImportError(
            "COMPOSCENE_BACKEND=compiled but composcene._core is not built; "
            "reinstall with a C compiler or unset the variable"
        )
    kernels = _kernels_c
elif _choice in ("python", "numpy", "pure"):
    kernels = _kernels_py
else:
    raise ConfigError(
        f"COMPOSCENE_BACKEND={_choice!r} not recognized "
        "(expected auto, compiled, or python)"
    )


def backend_name() -> str:
    """Which kernel implementation this process is running on."""
    return "compiled" if kernels is _kernels_c else "python"


def compiled_available() -> bool:
    return _kernels_c is not None
