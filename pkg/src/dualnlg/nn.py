"""Parameter registry and the few layers built on :mod:`dualnlg.tensor`."""

from __future__ import annotations

import zlib

import numpy as np

from . import tensor as T
from .tensor import Parameter


def named_rng(seed, name):
    """Independent generator keyed by ``(seed, name)``.

    Parameter initialisation and every stochastic site in training draw from
    their own stream, so adding a component never perturbs the others.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


class ParamStore:
    """Ordered ``name -> Parameter`` map with deterministic per-name init."""

    def __init__(self, seed=0):
        self.seed = seed
        self.params = {}

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def _add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Parameter(value, name)
        self.params[name] = p
        return p

    def xavier(self, name, shape, fan_in=None, fan_out=None):
        fan_in = shape[0] if fan_in is None else fan_in
        fan_out = shape[-1] if fan_out is None else fan_out
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self._add(name, named_rng(self.seed, name).uniform(-bound, bound, size=shape))

    def zeros(self, name, shape):
        return self._add(name, np.zeros(shape))

    def constant(self, name, value):
        return self._add(name, value)

    def state(self):
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state(self, arrays, strict=True):
        missing = [n for n in self.params if n not in arrays]
        extra = [n for n in arrays if n not in self.params]
        if strict and (missing or extra):
            raise KeyError(f"checkpoint mismatch: missing={missing} unexpected={extra}")
        for n, p in self.params.items():
            if n in arrays:
                if arrays[n].shape != p.data.shape:
                    raise ValueError(f"shape mismatch for {n}: {arrays[n].shape} vs {p.data.shape}")
                p.data = np.array(arrays[n], dtype=np.float64)
                p.zero_grad()


def linear(x, w, b=None):
    y = T.matmul(x, w)
    return y if b is None else y + b


class LSTMWeights:
    """Input, recurrent and bias weights of one LSTM layer (gate order i, f, o, g)."""

    def __init__(self, store, prefix, d_in, hidden, forget_bias=1.0):
        self.hidden = hidden
        self.w_x = store.xavier(f"{prefix}.w_x", (d_in, 4 * hidden), fan_out=hidden)
        self.w_h = store.xavier(f"{prefix}.w_h", (hidden, 4 * hidden), fan_out=hidden)
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = forget_bias
        self.b = store.constant(f"{prefix}.b", b)


def lstm_step(x_t, h_prev, c_prev, weights, extra=None):
    """One LSTM step; ``extra`` is added to the gate pre-activations when given."""
    z = T.matmul(x_t, weights.w_x) + T.matmul(h_prev, weights.w_h) + weights.b
    if extra is not None:
        z = z + extra
    return T.lstm_cell(z, c_prev)


def run_lstm(xs, weights, h0=None, c0=None):
    """Unroll over a (B, T, d) input; returns the list of hidden states.

    The input projection for every step is computed with one matmul.
    """
    b, steps = xs.shape[0], xs.shape[1]
    hid = weights.hidden
    xw = T.matmul(xs, weights.w_x) + weights.b
    h = T.Tensor(np.zeros((b, hid))) if h0 is None else h0
    c = T.Tensor(np.zeros((b, hid))) if c0 is None else c0
    hs = []
    for t in range(steps):
        z = xw[:, t] + T.matmul(h, weights.w_h)
        h, c = T.lstm_cell(z, c)
        hs.append(h)
    return hs


class Dropout:
    """A dropout site with its own random stream; identity when ``train`` is off."""

    def __init__(self, keep_prob, rng):
        self.keep_prob = keep_prob
        self.rng = rng
        self.train = True

    def __call__(self, x):
        if not self.train or self.keep_prob >= 1.0:
            return x
        return T.dropout(x, self.keep_prob, self.rng, train=True)


def pad_ids(seqs, pad=0, reverse=False):
    """Right-pad integer sequences into a (B, T) array; ``reverse`` flips each within its length."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max())), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s[::-1] if reverse else s
    return out, lengths


class BiLSTM:
    """Bidirectional LSTM returning ``[last forward state; last backward state]``."""

    def __init__(self, store, prefix, d_in, hidden):
        self.fwd = LSTMWeights(store, f"{prefix}.fwd", d_in, hidden)
        self.bwd = LSTMWeights(store, f"{prefix}.bwd", d_in, hidden)

    def __call__(self, x_fwd, x_bwd, lengths):
        """``x_bwd`` holds the same sequences reversed within their lengths."""
        last = lengths - 1
        hf = T.gather_steps(T.stack(run_lstm(x_fwd, self.fwd), axis=1), last)
        hb = T.gather_steps(T.stack(run_lstm(x_bwd, self.bwd), axis=1), last)
        return T.concat([hf, hb], axis=1)
