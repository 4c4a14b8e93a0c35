"""Backend dispatch for the Monte Carlo hot kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``KLDISAC_PURE_PYTHON`` is set to ``1``, the NumPy
implementations are used. ``BACKEND`` names the active choice.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("KLDISAC_PURE_PYTHON", "0") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

quadform_mean = _impl.quadform_mean
psk_bit_errors = _impl.psk_bit_errors

__all__ = ["BACKEND", "quadform_mean", "psk_bit_errors"]
