"""Backend selection for the hot loops.

The compiled extension is used when importable; set
``TIEREDANN_PURE_PYTHON=1`` to force the pure-Python fallback.
"""
import os
import threading

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("TIEREDANN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels

LRU, LFU, LRFU = _pykernels.LRU, _pykernels.LFU, _pykernels.LRFU

beam_search = _impl.beam_search
detour_counts = _impl.detour_counts
wavp_process = _impl.wavp_process
baseline_process = _impl.baseline_process
row_dists = _impl.row_dists


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython"/"python"), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


class Scratch(threading.local):
    """Per-thread scratch buffers (seen stamps, detour positions)."""

    def __init__(self):
        self.seen = np.zeros(1, dtype=np.int32)
        self.stamp = 0
        self.pos = np.zeros(1, dtype=np.int32)

    def next_stamp(self, n):
        if self.seen.shape[0] < n:
            self.seen = np.zeros(max(n, 2 * self.seen.shape[0]), dtype=np.int32)
            self.stamp = 0
        self.stamp += 1
        if self.stamp >= 2**31 - 1:
            self.seen[:] = 0
            self.stamp = 1
        return self.seen, self.stamp

    def positions(self, n):
        if self.pos.shape[0] < n:
            self.pos = np.zeros(max(n, 2 * self.pos.shape[0]), dtype=np.int32)
        return self.pos


scratch = Scratch()
