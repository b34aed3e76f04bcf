"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy twin is
loaded. Set ``DUALNLG_KERNELS=python`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("DUALNLG_KERNELS", "").lower() == "python":
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
im2col = _impl.im2col
col2im = _impl.col2im
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
scatter_add_rows = _impl.scatter_add_rows


def backends():
    """Return every importable backend module, fallback first."""
    mods = [_kernels_py]
    try:
        from . import _ckernels
    except ImportError:
        return mods
    mods.append(_ckernels)
    return mods
