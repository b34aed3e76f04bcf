"""Central finite-difference gradient checks."""

import numpy as np

from .tensor import backward


def numerical_grad(loss_fn, param, index, eps=1e-5):
    old = param.data[index]
    param.data[index] = old + eps
    up = loss_fn().item()
    param.data[index] = old - eps
    down = loss_fn().item()
    param.data[index] = old
    return (up - down) / (2 * eps)


def relative_error(analytic, numeric):
    """Max-norm relative error: max|a - n| / max(max|a|, max|n|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(loss_fn, params, eps=1e-5, max_entries=12, rng=None):
    """Compare backprop gradients with central differences.

    ``loss_fn`` must be deterministic (re-seed any sampling inside it). At most
    ``max_entries`` randomly chosen coordinates are probed per parameter.
    Returns ``{param_name: relative_error}``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()
    errors = {}
    for p in params:
        size = p.data.size
        flat = rng.choice(size, size=min(size, max_entries), replace=False)
        idx = [np.unravel_index(i, p.data.shape) for i in flat]
        a = np.array([analytic[p.name][i] for i in idx])
        n = np.array([numerical_grad(loss_fn, p, i, eps) for i in idx])
        errors[p.name] = relative_error(a, n)
    return errors
