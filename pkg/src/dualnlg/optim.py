"""Adam, global-norm clipping and the epoch learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BASE_LR = 0.001
DECAY_RATE = 0.95
DECAY_AFTER = 5


def lr_schedule(epoch, base_lr=BASE_LR, decay=DECAY_RATE, hold=DECAY_AFTER):
    """Constant ``base_lr`` for the first ``hold`` epochs, then ``decay`` per epoch.

    Epochs are 1-based.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if epoch <= hold:
        return base_lr
    return base_lr * decay ** (epoch - hold)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = 0.0
    for p in params:
        total += float(np.dot(p.grad.ravel(), p.grad.ravel()))
    norm = math.sqrt(total)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale
    return norm


def adam_step(params, state, lr):
    """One bias-corrected Adam update in place, then zero the gradients."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        denom = np.sqrt(v / corr2)
        denom += state.eps
        p.data -= lr * (m / corr1) / denom
        p.zero_grad()
