"""Gaussian posteriors, the conditional prior, reparameterisation and the latent projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import linear

LOG_VAR_BOUND = 10.0


@dataclass
class DiagonalGaussian:
    mu: T.Tensor
    log_var: T.Tensor

    @classmethod
    def from_raw(cls, mu, raw_log_var):
        return cls(mu, T.clamp(raw_log_var, -LOG_VAR_BOUND, LOG_VAR_BOUND))

    @classmethod
    def standard(cls, shape):
        return cls(T.Tensor(np.zeros(shape)), T.Tensor(np.zeros(shape)))

    @property
    def dim(self):
        return self.mu.shape[-1]


def reparameterize(g, eps):
    """``mu + exp(log_var / 2) * eps`` with ``eps`` supplied by the caller."""
    return g.mu + T.exp(g.log_var * 0.5) * T.as_tensor(eps)


def kl_gaussians(q, p):
    """KL(q || p) for diagonal Gaussians, summed over the last axis.

    Written as ``0.5 * (expm1(d) - d + dmu^2 / var_p)`` with ``d = log_var_q -
    log_var_p``, which is exactly zero when ``q == p`` and never rounds below it.
    """
    if q.mu.shape != p.mu.shape:
        raise ValueError(f"dimension mismatch {q.mu.shape} vs {p.mu.shape}")
    d = q.log_var - p.log_var
    dmu = q.mu - p.mu
    per_dim = (T.expm1(d) - d + dmu * dmu * T.exp(-p.log_var)) * 0.5
    return T.tsum(per_dim, axis=-1)


def kl_standard_normal(q):
    return kl_gaussians(q, DiagonalGaussian.standard(q.mu.shape))


def _check_dim(x, expected, what):
    if x.shape[-1] != expected:
        raise ValueError(f"{what} has dim {x.shape[-1]}, expected {expected}")


class _GaussianHead:
    """``hidden = ReLU(W x + b)`` followed by linear mean and log-variance heads."""

    def __init__(self, store, prefix, d_in, d_z):
        self.d_in = d_in
        self.w_z = store.xavier(f"{prefix}.w_z", (d_in, d_z))
        self.b_z = store.zeros(f"{prefix}.b_z", (d_z,))
        self.w_mu = store.xavier(f"{prefix}.w_mu", (d_z, d_z))
        self.b_mu = store.zeros(f"{prefix}.b_mu", (d_z,))
        self.w_lv = store.xavier(f"{prefix}.w_lv", (d_z, d_z))
        self.b_lv = store.zeros(f"{prefix}.b_lv", (d_z,))

    def __call__(self, x):
        _check_dim(x, self.d_in, "input")
        h = T.relu(linear(x, self.w_z, self.b_z))
        return DiagonalGaussian.from_raw(linear(h, self.w_mu, self.b_mu), linear(h, self.w_lv, self.b_lv))


class InferenceNetwork:
    """Posterior q(z | d, u), prior p(z | d), the optional utterance-only posterior, and the
    shared projection from a latent sample to the decoder's input space.
    """

    def __init__(self, store, d_da=200, d_utt=100, d_z=300, d_e=100, autoencoder=False):
        self.d_da, self.d_utt, self.d_z, self.d_e = d_da, d_utt, d_z, d_e
        self.post = _GaussianHead(store, "latent.post", d_da + d_utt, d_z)
        self.prior_head = _GaussianHead(store, "latent.prior", d_da, d_z)
        self.aux = None
        if autoencoder:
            # utterance-only Gaussian: linear heads straight from h_U
            self.aux = (
                store.xavier("latent.aux.w_mu", (d_utt, d_z)),
                store.zeros("latent.aux.b_mu", (d_z,)),
                store.xavier("latent.aux.w_lv", (d_utt, d_z)),
                store.zeros("latent.aux.b_lv", (d_z,)),
            )
        self.w_e = store.xavier("latent.w_e", (d_z, d_e))
        self.b_e = store.zeros("latent.b_e", (d_e,))

    def posterior(self, h_da, h_utt):
        _check_dim(h_da, self.d_da, "h_D")
        _check_dim(h_utt, self.d_utt, "h_U")
        return self.post(T.concat([h_da, h_utt], axis=-1))

    def prior(self, h_da):
        return self.prior_head(h_da)

    def utterance_posterior(self, h_utt):
        if self.aux is None:
            raise RuntimeError("model has no autoencoder branch")
        _check_dim(h_utt, self.d_utt, "h_U")
        w_mu, b_mu, w_lv, b_lv = self.aux
        return DiagonalGaussian.from_raw(linear(h_utt, w_mu, b_mu), linear(h_utt, w_lv, b_lv))

    def project(self, z):
        _check_dim(z, self.d_z, "latent")
        return T.relu(linear(z, self.w_e, self.b_e))

    def decode_latent(self, h_da, rng=None):
        """Decoder input at generation time: the prior mean, or a prior sample when ``rng`` is given."""
        p = self.prior(h_da)
        if rng is None:
            return self.project(p.mu)
        return self.project(reparameterize(p, rng.standard_normal(p.mu.shape)))
