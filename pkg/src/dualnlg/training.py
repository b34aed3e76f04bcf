"""Models, objectives, annealing and the training loop."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import corrupt_swap, default_swaps, relexicalize, tokenize
from .decoders import (
    DeconvDecoder,
    RecurrentDecoder,
    beam_search,
    reconstruction_nll,
    teacher_forced_nll,
    token_accuracy,
)
from .encoders import CNNEncoder, DAEncoder, RNNEncoder, frame_tokens
from .latent import InferenceNetwork, kl_gaussians, kl_standard_normal, reparameterize
from .metrics import bleu, slot_error_rate
from .nn import Dropout, ParamStore, named_rng
from .optim import AdamState, adam_step, clip_grad_norm, lr_schedule

log = logging.getLogger(__name__)

MODEL_KINDS = ("ralstm", "rvnlg", "cvnlg", "dualvae", "crossvae")
_AUTOENCODER_KINDS = ("dualvae", "crossvae")


@dataclass
class TrainConfig:
    model: str = "crossvae"
    samples: int = 1
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seeds: tuple = (0, 1, 2, 3, 4)
    keep_prob: float = 0.7
    base_lr: float = 0.001
    lr_decay: float = 0.95
    lr_hold: int = 5
    clip_norm: float = 5.0
    kl_warmup_steps: int = 10_000
    alpha_decay_steps: int = 10_000
    kl_fixed: float | None = None
    alpha_fixed: float | None = None
    latent_to_decoder: bool = True
    beam_width: int = 10
    max_len: int = 73
    valid_limit: int | None = None
    emb_dim: int = 100
    hidden: int = 100
    d_z: int = 300
    d_e: int = 100
    frame_len: int = 73
    filters: tuple = (300, 600, 100)
    widths: tuple = (5, 5, 16)
    strides: tuple = (2, 2, 2)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}; choose from {', '.join(MODEL_KINDS)}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("seeds", "filters", "widths", "strides"):
            setattr(self, name, tuple(getattr(self, name)))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class AnnealSchedule:
    """Per-step linear ramps: KL weight 0 -> 1, autoencoder weight alpha 1 -> 0.

    ``kl_fixed`` / ``alpha_fixed`` pin a weight to a constant instead.
    """

    kl_warmup_steps: int = 10_000
    alpha_decay_steps: int = 10_000
    kl_fixed: float | None = None
    alpha_fixed: float | None = None

    def kl_weight(self, step):
        if self.kl_fixed is not None:
            return self.kl_fixed
        if self.kl_warmup_steps <= 0:
            return 1.0
        return min(1.0, step / self.kl_warmup_steps)

    def alpha(self, step):
        if self.alpha_fixed is not None:
            return self.alpha_fixed
        if self.alpha_decay_steps <= 0:
            return 0.0
        return max(0.0, 1.0 - step / self.alpha_decay_steps)

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg.kl_warmup_steps, cfg.alpha_decay_steps, cfg.kl_fixed, cfg.alpha_fixed)


class Sites:
    """Random streams for dropout masks, latent noise, corruption and shuffling.

    Every site draws from its own ``(seed, name)`` stream, so models that differ
    only by extra components consume identical randomness at the shared sites.
    """

    def __init__(self, seed, keep_prob=0.7, samples=1, prefix="", _shared=None):
        self.seed, self.keep_prob, self.samples, self.prefix = seed, keep_prob, samples, prefix
        self._shared = _shared if _shared is not None else {"rngs": {}, "drops": {}, "training": True}

    @property
    def training(self):
        return self._shared["training"]

    @training.setter
    def training(self, flag):
        self._shared["training"] = flag

    def child(self, name):
        """Same seed, disjoint stream names."""
        return Sites(self.seed, self.keep_prob, self.samples, f"{self.prefix}{name}/", self._shared)

    def rng(self, name):
        key = self.prefix + name
        rngs = self._shared["rngs"]
        if key not in rngs:
            rngs[key] = named_rng(self.seed, f"site/{key}")
        return rngs[key]

    def drop(self, name):
        if not self.training or self.keep_prob >= 1.0:
            return None
        key = self.prefix + name
        drops = self._shared["drops"]
        if key not in drops:
            drops[key] = Dropout(self.keep_prob, self.rng(f"dropout/{name}"))
        return drops[key]

    def normal(self, name, shape):
        return self.rng(f"noise/{name}").standard_normal(shape)


class Model:
    """All components of one model kind, drawing parameters from a shared store."""

    def __init__(self, kind, vocab, seed=0, config=None):
        cfg = config or TrainConfig(model=kind)
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind, self.vocab, self.seed = kind, vocab, seed
        self.latent_to_decoder = cfg.latent_to_decoder
        self.store = store = ParamStore(seed)
        self.da_enc = DAEncoder(store, len(vocab.slot_itos), len(vocab.value_itos), cfg.emb_dim, cfg.hidden)
        self.utt_enc = self.latent = self.dcnn = None
        geom = dict(length=cfg.frame_len, filters=cfg.filters, widths=cfg.widths, strides=cfg.strides)
        if kind != "ralstm":
            if kind == "rvnlg":
                self.utt_enc = RNNEncoder(store, len(vocab), cfg.emb_dim, cfg.hidden)
            else:
                self.utt_enc = CNNEncoder(store, len(vocab), cfg.emb_dim, **geom)
            self.latent = InferenceNetwork(
                store, self.da_enc.dim, self.utt_enc.dim, cfg.d_z, cfg.d_e, autoencoder=kind in _AUTOENCODER_KINDS
            )
        d_latent = cfg.d_e if self.latent is not None else None
        self.decoder = RecurrentDecoder(store, len(vocab), self.da_enc.dim, d_latent, cfg.emb_dim, cfg.hidden)
        if kind in _AUTOENCODER_KINDS:
            self.dcnn = DeconvDecoder(store, len(vocab), cfg.d_e, cfg.emb_dim, **geom)

    @property
    def variational(self):
        return self.latent is not None

    @property
    def injects_latent(self):
        return self.variational and self.latent_to_decoder

    def parameters(self):
        return list(self.store)

    def state(self):
        return self.store.state()

    def load_state(self, arrays):
        self.store.load_state(arrays)

    def encode_da(self, das, drop=None):
        return self.da_enc([self.vocab.encode_da(d) for d in das], drop)

    def generation_latent(self, h_da):
        return self.latent.decode_latent(h_da) if self.injects_latent else None

    def generate(self, da, width=10, max_len=73, top_k=None):
        with T.no_grad():
            h_da = self.encode_da([da])
            h_e = self.generation_latent(h_da)
        return beam_search(self.decoder, h_da, h_e, width=width, max_len=max_len, top_k=top_k)


# data -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Pair:
    da: object  # DialogueAct, or None for unlabelled utterances
    ids: tuple


def make_pairs(examples, vocab):
    """One training pair per (example, reference)."""
    pairs = []
    for ex in examples:
        for u in ex.utterances:
            pairs.append(Pair(ex.da, tuple(vocab.encode(u.tokens))))
    return pairs


def batches(pairs, size, rng=None):
    order = np.arange(len(pairs)) if rng is None else rng.permutation(len(pairs))
    for i in range(0, len(pairs), size):
        yield [pairs[j] for j in order[i : i + size]]


# objectives ---------------------------------------------------------------------------------


@dataclass
class Encoded:
    h_da: T.Tensor
    posterior: object
    prior: object


def _encode(model, batch, sites, enc=None):
    if enc is not None:
        return enc
    h_da = model.encode_da([p.da for p in batch], sites.drop("da"))
    h_u = model.utt_enc([list(p.ids) for p in batch], sites.drop("utt.post"))
    return Encoded(h_da, model.latent.posterior(h_da, h_u), model.latent.prior(h_da))


def loss_baseline(model, batch, sites):
    """Teacher-forced NLL of the decoder with no latent path."""
    h_da = model.encode_da([p.da for p in batch], sites.drop("da"))
    nll = teacher_forced_nll(model.decoder, h_da, None, [list(p.ids) for p in batch], sites.drop("dec"))
    return nll, {"nll": nll.item()}


def loss_vnlg(model, batch, kl_w, sites, enc=None):
    """``kl_w * KL(posterior || prior)`` plus the NLL averaged over ``M`` latent samples.

    Both terms are means over the batch; the NLL is summed within each sequence.
    """
    enc = _encode(model, batch, sites, enc)
    b = len(batch)
    kl = T.tsum(kl_gaussians(enc.posterior, enc.prior)) / b
    ids = [list(p.ids) for p in batch]
    nll = None
    for _ in range(sites.samples):
        h_e = None
        if model.latent_to_decoder:
            eps = sites.normal("post", enc.posterior.mu.shape)
            h_e = model.latent.project(reparameterize(enc.posterior, eps))
        term = teacher_forced_nll(model.decoder, enc.h_da, h_e, ids, sites.drop("dec"))
        nll = term if nll is None else nll + term
    nll = nll / sites.samples
    loss = kl * kl_w + nll
    return loss, {"nll": nll.item(), "kl": kl.item(), "vnlg": loss.item()}


def loss_cnn_dcnn(model, ids, kl_w, sites, n_swaps=None):
    """Denoising autoencoder over utterances alone: encode a word-swapped copy,
    reconstruct the clean frame from a sample of the utterance Gaussian.
    """
    ids = [list(s) for s in ids]
    rng = sites.rng("swap")
    noisy = [corrupt_swap(s, default_swaps(len(s)) if n_swaps is None else n_swaps, rng) for s in ids]
    h_u = model.utt_enc(noisy, sites.drop("utt.aux"))
    g = model.latent.utterance_posterior(h_u)
    b = len(ids)
    kl = T.tsum(kl_standard_normal(g)) / b
    h_zu = reparameterize(g, sites.normal("aux", g.mu.shape))
    rec = reconstruction_nll(model.dcnn, model.latent.project(h_zu), frame_tokens(ids, model.dcnn.length))
    loss = kl * kl_w + rec
    return loss, {"cnn_dcnn": loss.item(), "cnn_dcnn_kl": kl.item(), "cnn_dcnn_rec": rec.item()}


def loss_da_dcnn(model, batch, kl_w, sites, enc=None):
    """The conditional bound with the deconvolutional decoder in place of the recurrent one."""
    enc = _encode(model, batch, sites, enc)
    b = len(batch)
    kl = T.tsum(kl_gaussians(enc.posterior, enc.prior)) / b
    h_z = reparameterize(enc.posterior, sites.normal("da_dcnn", enc.posterior.mu.shape))
    frame = frame_tokens([list(p.ids) for p in batch], model.dcnn.length)
    rec = reconstruction_nll(model.dcnn, model.latent.project(h_z), frame)
    loss = kl * kl_w + rec
    return loss, {"da_dcnn": loss.item(), "da_dcnn_rec": rec.item()}


def loss_dualvae(model, batch, kl_w, alpha, sites):
    vnlg, parts = loss_vnlg(model, batch, kl_w, sites)
    cnn, p2 = loss_cnn_dcnn(model, [p.ids for p in batch], kl_w, sites)
    return vnlg + cnn * alpha, parts | p2


def loss_crossvae(model, batch, kl_w, alpha, sites):
    enc = _encode(model, batch, sites)
    vnlg, parts = loss_vnlg(model, batch, kl_w, sites, enc)
    cnn, p2 = loss_cnn_dcnn(model, [p.ids for p in batch], kl_w, sites)
    da, p3 = loss_da_dcnn(model, batch, kl_w, sites, enc)
    return vnlg + (cnn + da) * alpha, parts | p2 | p3


def semi_supervised_step(model, labeled, unlabeled, kl_w, alpha, sites):
    """Supervised objective on ``labeled`` plus ``alpha`` times the utterance-only
    autoencoder loss on ``unlabeled`` (which carries no dialogue acts).
    """
    loss, parts = objective(model, labeled, kl_w, alpha, sites)
    if unlabeled:
        if model.dcnn is None:
            raise ValueError(f"model kind {model.kind!r} has no autoencoder branch for unlabelled data")
        extra, p2 = loss_cnn_dcnn(model, [p.ids for p in unlabeled], kl_w, sites.child("unlabeled"))
        loss = loss + extra * alpha
        parts["unlabeled"] = p2["cnn_dcnn"]
    return loss, parts


def objective(model, batch, kl_w, alpha, sites):
    """The training loss of ``model.kind``; returns ``(loss, {component: float})``."""
    kind = model.kind
    if kind == "ralstm":
        loss, parts = loss_baseline(model, batch, sites)
    elif kind in ("rvnlg", "cvnlg"):
        loss, parts = loss_vnlg(model, batch, kl_w, sites)
    elif kind == "dualvae":
        loss, parts = loss_dualvae(model, batch, kl_w, alpha, sites)
    else:
        loss, parts = loss_crossvae(model, batch, kl_w, alpha, sites)
    parts["loss"] = loss.item()
    return loss, parts


# evaluation ---------------------------------------------------------------------------------


@dataclass
class Generation:
    da: object
    tokens: list  # delexicalised, best hypothesis
    top_k: list  # [(tokens, normalised score), ...]


def generate_all(model, das, width=10, max_len=73, top_k=1):
    out = []
    unfinished = 0
    for da in das:
        hyps = model.generate(da, width=width, max_len=max_len, top_k=max(top_k, 1))
        unfinished += not hyps[0].finished
        ranked = [(model.vocab.decode(h.tokens), h.normalized) for h in hyps]
        out.append(Generation(da, ranked[0][0], ranked[:top_k]))
    if unfinished:
        log.warning("%d of %d outputs hit the %d-token limit without EOS", unfinished, len(das), max_len)
    return out


def score_generations(das, generated, refs):
    """``(bleu, err)`` of delexicalised outputs against raw reference strings."""
    cands = [tokenize(relexicalize(tokens, da)) for tokens, da in zip(generated, das)]
    references = [[tokenize(r) for r in rs] for rs in refs]
    return bleu(cands, references), slot_error_rate(generated, das)


def teacher_forced_stats(model, examples):
    """``(token accuracy, mean KL)`` on ``examples`` without dropout.

    The latent fed to the decoder is the posterior mean; models without a
    latent report a KL of 0.
    """
    pairs = make_pairs(examples, model.vocab)
    ids = [list(p.ids) for p in pairs]
    h_e, kl = None, 0.0
    with T.no_grad():
        h_da = model.encode_da([p.da for p in pairs])
        if model.variational:
            post = model.latent.posterior(h_da, model.utt_enc(ids))
            kl = float(kl_gaussians(post, model.latent.prior(h_da)).data.mean())
            if model.latent_to_decoder:
                h_e = model.latent.project(post.mu)
    return token_accuracy(model.decoder, h_da, h_e, ids), kl


def evaluate_model(model, examples, width=10, max_len=73):
    gens = generate_all(model, [e.da for e in examples], width, max_len)
    return score_generations([e.da for e in examples], [g.tokens for g in gens], [e.refs for e in examples])


# training loop --------------------------------------------------------------------------------

LOG_FIELDS = (
    "step", "epoch", "lr", "kl_w", "alpha", "loss", "nll", "kl", "vnlg",
    "cnn_dcnn", "da_dcnn", "unlabeled", "grad_norm", "val_bleu", "val_err",
)


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunResult:
    best_state: dict
    best_epoch: int
    best_bleu: float
    best_err: float
    epochs_run: int
    steps: int
    rows: list = field(default_factory=list)
    diverged: str | None = None
    final_parts: dict = field(default_factory=dict)


def _better(bleu_value, err_value, best):
    if best is None:
        return True
    b, e = best
    return bleu_value > b or (bleu_value == b and err_value < e)


def train(model, train_examples, valid_examples, config, seed=0, log_path=None, unlabeled=None,
          validate_initial=False):
    """Train ``model`` in place; the returned result carries the best parameters.

    Validation BLEU (ties broken by lower ERR) selects the checkpoint; training
    stops after ``config.patience`` epochs without improvement. A non-finite loss
    or gradient ends the run and is reported in ``RunResult.diverged``.
    """
    pairs = make_pairs(train_examples, model.vocab)
    if not pairs:
        raise ValueError("training split is empty")
    unl_pairs = make_pairs(unlabeled or [], model.vocab)
    valid = list(valid_examples)[: config.valid_limit] if config.valid_limit else list(valid_examples)
    if not valid:
        raise ValueError("validation split is empty")
    sites = Sites(seed, config.keep_prob, config.samples)
    anneal = AnnealSchedule.from_config(config)
    adam = AdamState()
    params = model.parameters()
    rows = []
    best, best_epoch, best_state = None, 0, model.state()
    step = 0
    diverged = None
    parts = {}
    shuffle = sites.rng("shuffle")
    unl_rng = sites.rng("unlabeled_shuffle")

    def validate(epoch):
        nonlocal best, best_epoch, best_state
        b, e = evaluate_model(model, valid, config.beam_width, config.max_len)
        rows.append({"step": step, "epoch": epoch, "val_bleu": b, "val_err": e})
        log.info("epoch %d step %d: valid BLEU %.4f ERR %.2f", epoch, step, b, e)
        if _better(b, e, best):
            best, best_epoch, best_state = (b, e), epoch, model.state()

    if validate_initial or config.max_epochs == 0:
        validate(0)
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        lr = lr_schedule(epoch, config.base_lr, config.lr_decay, config.lr_hold)
        unl_iter = batches(unl_pairs, config.batch_size, unl_rng) if unl_pairs else None
        for batch in batches(pairs, config.batch_size, shuffle):
            kl_w, alpha = anneal.kl_weight(step), anneal.alpha(step)
            if unl_pairs:
                unl_batch = next(unl_iter, None)
                if unl_batch is None:
                    unl_iter = batches(unl_pairs, config.batch_size, unl_rng)
                    unl_batch = next(unl_iter)
                loss, parts = semi_supervised_step(model, batch, unl_batch, kl_w, alpha, sites)
            else:
                loss, parts = objective(model, batch, kl_w, alpha, sites)
            step += 1
            if not math.isfinite(parts["loss"]):
                diverged = f"non-finite loss at step {step}"
                break
            T.backward(loss)
            norm = clip_grad_norm(params, config.clip_norm)
            try:
                adam_step(params, adam, lr)
            except FloatingPointError as exc:
                diverged = f"step {step}: {exc}"
                break
            rows.append({"step": step, "epoch": epoch, "lr": lr, "kl_w": float(kl_w), "alpha": float(alpha),
                         "grad_norm": norm, **parts})
        if diverged:
            log.error("run diverged: %s", diverged)
            break
        validate(epoch)
        if epoch - best_epoch >= config.patience:
            break
    if log_path is not None:
        write_log(log_path, rows)
    model.load_state(best_state)
    return RunResult(
        best_state=best_state,
        best_epoch=best_epoch,
        best_bleu=best[0] if best else float("nan"),
        best_err=best[1] if best else float("nan"),
        epochs_run=epoch,
        steps=step,
        rows=rows,
        diverged=diverged,
        final_parts=parts,
    )


def write_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in LOG_FIELDS])


def fine_tune(model, finetune_examples, valid_examples, config, seed=0, log_path=None):
    """Continue training every parameter on target data.

    Optimiser state, learning-rate schedule and annealing restart from scratch;
    the model's vocabulary must already cover the target domain.
    """
    return train(model, finetune_examples, valid_examples, config, seed, log_path, validate_initial=True)
