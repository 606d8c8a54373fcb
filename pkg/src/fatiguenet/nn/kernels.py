"""Backend selection for the hot kernels.

The compiled extension is used when it imports cleanly; otherwise, or when
``FATIGUENET_PURE_PYTHON=1`` is set, the numpy fallback is used. Both expose
``im2col``, ``col2im``, ``maxpool_forward`` and ``maxpool_backward``.
"""
from __future__ import annotations

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)


def _load_backend():
    if os.environ.get("FATIGUENET_PURE_PYTHON", "") not in ("", "0"):
        return _kernels_py, "python"
    try:
        from . import _ckernels
    except ImportError as exc:
        log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        return _kernels_py, "python"
    return _ckernels, "cython"


_backend, BACKEND = _load_backend()

im2col = _backend.im2col
col2im = _backend.col2im
maxpool_forward = _backend.maxpool_forward
maxpool_backward = _backend.maxpool_backward
out_extent = _kernels_py.out_extent
