"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and semantics. Arrays are float64 / int64 and C-contiguous.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def im2col(x, width, stride):
    """(B, T, d) -> (B, T', width, d) windows of a valid 1-D convolution."""
    n_out = (x.shape[1] - width) // stride + 1
    win = sliding_window_view(x, width, axis=1)[:, : (n_out - 1) * stride + 1 : stride]
    # sliding_window_view puts the window axis last: (B, T', d, width)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2))


def col2im(cols, length, stride):
    """Adjoint of :func:`im2col`: scatter-add (B, T', width, d) windows into (B, length, d)."""
    b, n_out, width, d = cols.shape
    out = np.zeros((b, length, d))
    stop = (n_out - 1) * stride + 1
    for j in range(width):
        out[:, j : j + stop : stride] += cols[:, :, j]
    return out


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward(z, c_prev):
    """Fused LSTM nonlinearity.

    ``z`` holds gate pre-activations laid out as [input, forget, output, candidate].
    Returns ``(h, c, gates, tanh_c)`` where ``gates`` are the activated gates in
    the same layout (needed by the backward pass).
    """
    hid = c_prev.shape[-1]
    gates = np.empty_like(z)
    gates[:, : 3 * hid] = _sigmoid(z[:, : 3 * hid])
    gates[:, 3 * hid :] = np.tanh(z[:, 3 * hid :])
    i = gates[:, :hid]
    f = gates[:, hid : 2 * hid]
    o = gates[:, 2 * hid : 3 * hid]
    g = gates[:, 3 * hid :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, gates, tanh_c


def lstm_backward(dh, dc, c_prev, gates, tanh_c):
    """Gradients of :func:`lstm_forward` w.r.t. ``z`` and ``c_prev``."""
    hid = c_prev.shape[-1]
    i = gates[:, :hid]
    f = gates[:, hid : 2 * hid]
    o = gates[:, 2 * hid : 3 * hid]
    g = gates[:, 3 * hid :]
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(gates)
    dz[:, :hid] = dc_total * g * i * (1.0 - i)
    dz[:, hid : 2 * hid] = dc_total * c_prev * f * (1.0 - f)
    dz[:, 2 * hid : 3 * hid] = dh * tanh_c * o * (1.0 - o)
    dz[:, 3 * hid :] = dc_total * i * (1.0 - g * g)
    return dz, dc_total * f


def scatter_add_rows(n_rows, idx, src):
    """out[idx[n]] += src[n] for a flat index vector; used by embedding backward."""
    out = np.zeros((n_rows, src.shape[1]))
    np.add.at(out, idx, src)
    return out
