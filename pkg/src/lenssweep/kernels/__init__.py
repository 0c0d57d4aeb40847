"""Hot-kernel backend selection.

The compiled extension is preferred when importable; the NumPy/SciPy
fallback is used otherwise. Set LENSSWEEP_BACKEND=numpy|native to force
a choice (forcing "native" fails loudly if the extension is missing).
"""

from __future__ import annotations

import os

from . import numpy_backend

try:
    from . import _native
except ImportError:  # extension not built on this platform
    _native = None

_forced = os.environ.get("LENSSWEEP_BACKEND")
if _forced not in (None, "", "numpy", "native"):
    raise ValueError(f"LENSSWEEP_BACKEND must be 'numpy' or 'native', got {_forced!r}")
if _forced == "native" and _native is None:
    raise ImportError("LENSSWEEP_BACKEND=native but the compiled extension is unavailable")

if _forced == "numpy" or _native is None:
    _impl = numpy_backend
else:
    _impl = _native

BACKEND = _impl.NAME

convolve2d = _impl.convolve2d
box_sum = _impl.box_sum
varying_convolve = _impl.varying_convolve


def available_backends():
    """Importable backend modules, fallback first."""
    mods = [numpy_backend]
    if _native is not None:
        mods.append(_native)
    return mods
