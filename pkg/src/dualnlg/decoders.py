"""Recurrent and deconvolutional utterance decoders, and beam search."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import BOS, EOS, MAX_LEN, PAD
from .encoders import conv_lengths
from .nn import LSTMWeights, linear

log = logging.getLogger(__name__)

LENGTH_PENALTY = 0.7
BANNED = (PAD, BOS)


class RecurrentDecoder:
    """LSTM decoder conditioned on the DA vector and, optionally, a latent vector.

    At each step a sigmoid gate computed from the current input and previous
    state selects a DA feature ``d_t = gate * h_D``; ``d_t`` enters the LSTM
    gates and the output layer. A latent vector ``h_e`` is added to every gate
    pre-activation through its own matrix and also enters the initial state.
    Every conditioning input has its own weight matrix, so a model built without
    the latent terms computes exactly the same numbers as one that skips them.
    """

    def __init__(self, store, vocab_size, d_da=200, d_latent=None, emb_dim=100, hidden=100, prefix="dec"):
        self.vocab_size, self.hidden, self.d_da, self.d_latent = vocab_size, hidden, d_da, d_latent
        self.emb = store.xavier(f"{prefix}.emb", (vocab_size, emb_dim))
        self.emb.data[PAD] = 0.0
        self.lstm = LSTMWeights(store, f"{prefix}.lstm", emb_dim, hidden)
        self.w_da_gates = store.xavier(f"{prefix}.w_da_gates", (d_da, 4 * hidden), fan_out=hidden)
        self.w_gate_x = store.xavier(f"{prefix}.da_gate.w_x", (emb_dim, d_da))
        self.w_gate_h = store.xavier(f"{prefix}.da_gate.w_h", (hidden, d_da))
        self.b_gate = store.zeros(f"{prefix}.da_gate.b", (d_da,))
        self.w_init_da = store.xavier(f"{prefix}.init.w_da", (d_da, hidden))
        self.b_init = store.zeros(f"{prefix}.init.b", (hidden,))
        self.w_out_h = store.xavier(f"{prefix}.out.w_h", (hidden, vocab_size))
        self.w_out_da = store.xavier(f"{prefix}.out.w_da", (d_da, vocab_size))
        self.b_out = store.zeros(f"{prefix}.out.b", (vocab_size,))
        if d_latent is not None:
            self.u_gates = store.xavier(f"{prefix}.latent.u_gates", (d_latent, 4 * hidden), fan_out=hidden)
            self.w_init_latent = store.xavier(f"{prefix}.init.w_latent", (d_latent, hidden))

    @dataclass
    class Context:
        h_da: T.Tensor
        latent_gates: T.Tensor | None
        drop: object = None

    def start(self, h_da, h_e=None, drop=None):
        """Initial ``(h, c)`` state and the per-sequence conditioning context."""
        pre = linear(h_da, self.w_init_da, self.b_init)
        latent_gates = None
        if h_e is not None:
            if self.d_latent is None:
                raise ValueError("decoder was built without latent inputs")
            pre = pre + T.matmul(h_e, self.w_init_latent)
            latent_gates = T.matmul(h_e, self.u_gates)
        h = T.tanh(pre)
        c = T.Tensor(np.zeros(h.shape))
        return (h, c), self.Context(h_da, latent_gates, drop)

    def step(self, prev_ids, state, ctx):
        """Advance one token; returns ``(state, logits)``."""
        h_prev, c_prev = state
        x = T.embedding(self.emb, np.asarray(prev_ids), padding_idx=PAD)
        if ctx.drop is not None:
            x = ctx.drop(x)
        gate = T.sigmoid(T.matmul(x, self.w_gate_x) + T.matmul(h_prev, self.w_gate_h) + self.b_gate)
        d_t = gate * ctx.h_da
        z = (
            T.matmul(x, self.lstm.w_x)
            + T.matmul(h_prev, self.lstm.w_h)
            + T.matmul(d_t, self.w_da_gates)
            + self.lstm.b
        )
        if ctx.latent_gates is not None:
            z = z + ctx.latent_gates
        h, c = T.lstm_cell(z, c_prev)
        out = h if ctx.drop is None else ctx.drop(h)
        logits = T.matmul(out, self.w_out_h) + T.matmul(d_t, self.w_out_da) + self.b_out
        return (h, c), logits

    def log_probs(self, prev_ids, state, ctx):
        state, logits = self.step(prev_ids, state, ctx)
        return state, T.log_softmax(logits)

    def logits(self, h_da, h_e, inputs, drop=None):
        """Teacher-forced logits (B, T, V) for (B, T) input ids."""
        state, ctx = self.start(h_da, h_e, drop)
        out = []
        for t in range(inputs.shape[1]):
            state, lg = self.step(inputs[:, t], state, ctx)
            out.append(lg)
        return T.stack(out, axis=1)


def teacher_forcing_frame(ids):
    """``(inputs, targets, mask)`` for BOS-prefixed inputs and EOS-terminated targets."""
    length = max(len(s) for s in ids) + 1
    inputs = np.full((len(ids), length), PAD, dtype=np.int64)
    targets = np.full((len(ids), length), PAD, dtype=np.int64)
    mask = np.zeros((len(ids), length))
    for i, s in enumerate(ids):
        n = len(s)
        inputs[i, 0] = BOS
        inputs[i, 1 : n + 1] = s
        targets[i, :n] = s
        targets[i, n] = EOS
        mask[i, : n + 1] = 1.0
    return inputs, targets, mask


def teacher_forced_nll(decoder, h_da, h_e, ids, drop=None):
    """Negative log-likelihood summed over each sequence and averaged over the batch."""
    inputs, targets, mask = teacher_forcing_frame(ids)
    logits = decoder.logits(h_da, h_e, inputs, drop)
    return T.cross_entropy(logits, targets, mask) / len(ids)


def token_accuracy(decoder, h_da, h_e, ids):
    inputs, targets, mask = teacher_forcing_frame(ids)
    with T.no_grad():
        logits = decoder.logits(h_da, h_e, inputs).data
    hit = (logits.argmax(-1) == targets) * mask
    return float(hit.sum() / mask.sum())


class DeconvDecoder:
    """Mirror of :class:`dualnlg.encoders.CNNEncoder`: a latent vector is lifted to a
    one-position map and widened back to the fixed frame by transposed convolutions,
    then projected to vocabulary logits at every position.
    """

    def __init__(
        self,
        store,
        vocab_size,
        d_latent=100,
        emb_dim=100,
        length=MAX_LEN,
        filters=(300, 600, 100),
        widths=(5, 5, 16),
        strides=(2, 2, 2),
        prefix="dcnn",
    ):
        lengths = conv_lengths(length, widths, strides)
        if lengths[-1] != 1:
            raise ValueError(f"deconv stack cannot start from one position for length {length}")
        self.length, self.d_latent = length, d_latent
        self.lift_dim = filters[-1]
        self.lift_w = store.xavier(f"{prefix}.lift.w", (d_latent, self.lift_dim))
        self.lift_b = store.zeros(f"{prefix}.lift.b", (self.lift_dim,))
        # layers run from the deepest encoder layer back to the embedding depth
        depths = [emb_dim, *filters]
        self.layers = []
        for i in reversed(range(len(filters))):
            k_in, h, d_out, s = depths[i + 1], widths[i], depths[i], strides[i]
            w = store.xavier(f"{prefix}.deconv{i}.w", (k_in, h, d_out), fan_in=k_in, fan_out=h * d_out)
            b = store.zeros(f"{prefix}.deconv{i}.b", (d_out,))
            self.layers.append((w, b, s, lengths[i]))
        self.out_w = store.xavier(f"{prefix}.out.w", (emb_dim, vocab_size))
        self.out_b = store.zeros(f"{prefix}.out.b", (vocab_size,))

    def feature_maps(self, h_e):
        if h_e.shape[-1] != self.d_latent:
            raise ValueError(f"latent dim {h_e.shape[-1]} != {self.d_latent}")
        x = linear(h_e, self.lift_w, self.lift_b).reshape(h_e.shape[0], 1, self.lift_dim)
        maps = [x]
        for j, (w, b, s, target_len) in enumerate(self.layers):
            x = T.transposed_conv1d(x, w, s)
            if x.shape[1] != target_len:
                # valid convs drop trailing positions when (T - h) is not a stride multiple
                x = T.concat([x, T.Tensor(np.zeros((x.shape[0], target_len - x.shape[1], x.shape[2])))], axis=1)
            x = x + b
            if j < len(self.layers) - 1:
                x = T.relu(x)
            maps.append(x)
        return maps

    def __call__(self, h_e):
        """Logits of shape (B, length, V)."""
        return linear(self.feature_maps(h_e)[-1], self.out_w, self.out_b)


def reconstruction_nll(decoder, h_e, frame):
    """Per-position cross-entropy against a (B, length) PAD-filled target frame, batch-averaged."""
    return T.cross_entropy(decoder(h_e), frame) / frame.shape[0]


# search -------------------------------------------------------------------------------


def normalized(score, length, penalty=LENGTH_PENALTY):
    return score / length**penalty


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple  # emitted ids, EOS excluded
    score: float  # summed log-probability, EOS included when finished
    finished: bool

    @property
    def length(self):
        return len(self.tokens) + (1 if self.finished else 0)

    @property
    def normalized(self):
        return normalized(self.score, max(self.length, 1))


def _select(state, idx):
    h, c = state
    return T.Tensor(h.data[idx]), T.Tensor(c.data[idx])


def _tile(ctx, n):
    h_da = T.Tensor(np.repeat(ctx.h_da.data, n, axis=0))
    lat = None if ctx.latent_gates is None else T.Tensor(np.repeat(ctx.latent_gates.data, n, axis=0))
    return RecurrentDecoder.Context(h_da, lat)


def beam_search(decoder, h_da, h_e=None, width=10, max_len=MAX_LEN, top_k=None, banned=BANNED):
    """Beam search for one DA (``h_da`` and ``h_e`` have batch size 1).

    Each step keeps the ``width`` best extensions by summed log-probability over
    all live hypotheses; extensions ending in EOS leave the beam as finished.
    Finished hypotheses are ranked by log-probability / length**0.7. Search
    stops early once no live hypothesis can still beat the best finished one.
    Returns the ``top_k`` (default ``width``) best hypotheses, best first.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    top_k = width if top_k is None else top_k
    with T.no_grad():
        state0, ctx = decoder.start(h_da, h_e)
    live_tokens = [()]
    live_scores = np.zeros(1)
    state = state0
    finished = []
    for t in range(1, max_len + 1):
        prev = np.array([tok[-1] if tok else BOS for tok in live_tokens])
        step_ctx = _tile(ctx, len(live_tokens))
        with T.no_grad():
            state, lp = decoder.log_probs(prev, state, step_ctx)
        lp = lp.data.copy()
        lp[:, list(banned)] = -np.inf
        cand = live_scores[:, None] + lp
        n_live, vocab = cand.shape
        flat = cand.reshape(-1)
        # stable order: score desc, then hypothesis index, then token id
        order = np.lexsort((np.arange(flat.size), -flat))
        order = order[np.isfinite(flat[order])][:width]
        next_tokens, next_scores, keep = [], [], []
        for i in order:
            src, tok = divmod(int(i), vocab)
            if tok == EOS:
                finished.append(Hypothesis(live_tokens[src], float(flat[i]), True))
            else:
                next_tokens.append(live_tokens[src] + (tok,))
                next_scores.append(float(flat[i]))
                keep.append(src)
        if not next_tokens:
            live_tokens = []
            break
        live_tokens, live_scores = next_tokens, np.array(next_scores)
        state = _select(state, np.array(keep))
        if finished:
            best = max(h.normalized for h in finished)
            if best >= normalized(live_scores.max(), max_len):
                break
    if not finished:
        log.debug("no hypothesis reached EOS within %d tokens; returning partial output", max_len)
        partial = [Hypothesis(tok, float(s), False) for tok, s in zip(live_tokens, live_scores)]
        return sorted(partial, key=lambda h: -h.normalized)[:top_k]
    ranked = sorted(range(len(finished)), key=lambda i: (-finished[i].normalized, i))
    return [finished[i] for i in ranked[:top_k]]


def greedy_decode(decoder, h_da, h_e=None, max_len=MAX_LEN, banned=BANNED):
    """Pick the most probable token at every step until EOS (lowest id wins ties)."""
    with T.no_grad():
        state, ctx = decoder.start(h_da, h_e)
    tokens, score, prev = [], 0.0, BOS
    for _ in range(max_len):
        with T.no_grad():
            state, lp = decoder.log_probs(np.array([prev]), state, ctx)
        lp = lp.data[0].copy()
        lp[list(banned)] = -np.inf
        tok = int(np.argmax(lp))
        score += float(lp[tok])
        if tok == EOS:
            return Hypothesis(tuple(tokens), score, True)
        tokens.append(tok)
        prev = tok
    return Hypothesis(tuple(tokens), score, False)
