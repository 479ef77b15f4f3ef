"""Backend selection for the recurrent sequence kernels.

The compiled extension is preferred when importable; otherwise the NumPy
implementation takes over. ``SMOGCAST_BACKEND=python`` forces the fallback,
``SMOGCAST_BACKEND=cython`` insists on the extension (and fails loudly when
it is missing), anything else or unset means auto.
"""

from __future__ import annotations

import os

from . import kernels_py

_requested = os.environ.get("SMOGCAST_BACKEND", "auto").lower()

if _requested in ("python", "numpy", "py"):
    _impl = kernels_py
    BACKEND = "numpy"
elif _requested in ("cython", "c", "ext"):
    from . import _ckernels as _impl  # type: ignore[no-redef]

    BACKEND = "cython"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = kernels_py
        BACKEND = "numpy"

lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward
gru_seq_forward = _impl.gru_seq_forward
gru_seq_backward = _impl.gru_seq_backward


def backend() -> str:
    """Name of the active kernel backend ('cython' or 'numpy')."""
    return BACKEND
