"""Dialogue-act and utterance encoders.

All encoders take batches of integer id sequences and return a (B, dim) tensor.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .corpus import EOS, MAX_LEN, PAD
from .nn import BiLSTM, pad_ids


def _embedding_table(store, name, rows, dim):
    w = store.xavier(name, (rows, dim))
    w.data[PAD] = 0.0
    return w


class DAEncoder:
    """BiLSTM over (slot, value) pairs, each embedded as ``[slot_emb; value_emb]``."""

    def __init__(self, store, n_slots, n_values, emb_dim=100, hidden=100, prefix="da"):
        self.slot_emb = _embedding_table(store, f"{prefix}.slot_emb", n_slots, emb_dim)
        self.value_emb = _embedding_table(store, f"{prefix}.value_emb", n_values, emb_dim)
        self.rnn = BiLSTM(store, f"{prefix}.rnn", 2 * emb_dim, hidden)
        self.dim = 2 * hidden

    def _embed(self, slots, values):
        s = T.embedding(self.slot_emb, slots, padding_idx=PAD)
        v = T.embedding(self.value_emb, values, padding_idx=PAD)
        return T.concat([s, v], axis=-1)

    def __call__(self, encoded, drop=None):
        """``encoded`` is a list of ``(slot_ids, value_ids)`` from :meth:`Vocabulary.encode_da`."""
        slots, lengths = pad_ids([s for s, _ in encoded])
        values, _ = pad_ids([v for _, v in encoded])
        slots_r, _ = pad_ids([s for s, _ in encoded], reverse=True)
        values_r, _ = pad_ids([v for _, v in encoded], reverse=True)
        xf, xb = self._embed(slots, values), self._embed(slots_r, values_r)
        if drop is not None:
            xf, xb = drop(xf), drop(xb)
        return self.rnn(xf, xb, lengths)


def conv_lengths(length, widths, strides):
    out = [length]
    for h, s in zip(widths, strides):
        if out[-1] < h:
            raise ValueError(f"feature map of length {out[-1]} is shorter than filter width {h}")
        out.append((out[-1] - h) // s + 1)
    return out


def frame_tokens(ids, length=MAX_LEN):
    """Append EOS and pad (or truncate) to the fixed CNN frame."""
    out = np.full((len(ids), length), PAD, dtype=np.int64)
    for i, seq in enumerate(ids):
        seq = list(seq)[: length - 1] + [EOS]
        out[i, : len(seq)] = seq
    return out


class CNNEncoder:
    """Strided valid convolutions with ReLU that collapse a fixed-length frame to one vector.

    The geometry is checked at construction: the final feature map must have
    length 1 so that the output is a single ``filters[-1]``-dim vector.
    """

    def __init__(
        self,
        store,
        vocab_size,
        emb_dim=100,
        length=MAX_LEN,
        filters=(300, 600, 100),
        widths=(5, 5, 16),
        strides=(2, 2, 2),
        prefix="utt",
    ):
        if not len(filters) == len(widths) == len(strides):
            raise ValueError("filters, widths and strides must have equal length")
        self.lengths = conv_lengths(length, widths, strides)
        if self.lengths[-1] != 1:
            raise ValueError(f"conv stack maps length {length} to {self.lengths[-1]}, expected 1")
        self.length = length
        self.strides = tuple(strides)
        self.emb = _embedding_table(store, f"{prefix}.emb", vocab_size, emb_dim)
        self.weights, self.biases = [], []
        depth = emb_dim
        for i, (k, h) in enumerate(zip(filters, widths)):
            self.weights.append(store.xavier(f"{prefix}.conv{i}.w", (k, h, depth), fan_in=h * depth, fan_out=k))
            self.biases.append(store.zeros(f"{prefix}.conv{i}.b", (k,)))
            depth = k
        self.dim = filters[-1]

    def feature_maps(self, frame, drop=None):
        """All intermediate maps for a (B, length) id frame, input embedding first."""
        x = T.embedding(self.emb, frame, padding_idx=PAD)
        if drop is not None:
            x = drop(x)
        maps = [x]
        for w, b, s in zip(self.weights, self.biases, self.strides):
            x = T.relu(T.conv1d_valid(x, w, s) + b)
            maps.append(x)
        return maps

    def __call__(self, ids, drop=None):
        frame = frame_tokens(ids, self.length)
        out = self.feature_maps(frame, drop)[-1]
        return out.reshape(out.shape[0], self.dim)


class RNNEncoder:
    """BiLSTM over the unpadded token sequence; output is ``[last forward; last backward]``."""

    def __init__(self, store, vocab_size, emb_dim=100, hidden=100, prefix="utt"):
        self.emb = _embedding_table(store, f"{prefix}.emb", vocab_size, emb_dim)
        self.rnn = BiLSTM(store, f"{prefix}.rnn", emb_dim, hidden)
        self.dim = 2 * hidden

    def __call__(self, ids, drop=None):
        if any(len(s) == 0 for s in ids):
            raise ValueError("cannot encode an empty utterance")
        fwd, lengths = pad_ids(ids)
        bwd, _ = pad_ids(ids, reverse=True)
        xf = T.embedding(self.emb, fwd, padding_idx=PAD)
        xb = T.embedding(self.emb, bwd, padding_idx=PAD)
        if drop is not None:
            xf, xb = drop(xf), drop(xb)
        return self.rnn(xf, xb, lengths)
