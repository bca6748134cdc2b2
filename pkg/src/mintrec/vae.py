"""Sequential disentangled VAE: priors, posteriors, decoder and the ELBO.

All tensors are float64. Shapes use ``B`` for patients, ``T`` for steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
LOG_SIGMA_MIN = -8.0
LOG_SIGMA_MAX = 8.0


@dataclass
class GaussianParams:
    mu: torch.Tensor
    log_sigma: torch.Tensor

    @property
    def sigma(self):
        return torch.exp(self.log_sigma)

    def __getitem__(self, idx):
        return GaussianParams(self.mu[idx], self.log_sigma[idx])

    def detach(self):
        return GaussianParams(self.mu.detach(), self.log_sigma.detach())


def standard_normal(shape, dtype=DTYPE):
    return GaussianParams(torch.zeros(shape, dtype=dtype), torch.zeros(shape, dtype=dtype))


def _init_log_sigma(head, value):
    """Start the log-sigma half of a Gaussian head at ``value``."""
    with torch.no_grad():
        head.bias[head.out_features // 2:] = value


def _split_params(raw):
    mu, log_sigma = raw.chunk(2, dim=-1)
    return GaussianParams(mu, torch.clamp(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX))


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


class EmbeddingTables(nn.Module):
    def __init__(self, n_threads, n_stages, d_thread=8, d_stage=8, std=0.1):
        super().__init__()
        self.thread = nn.Embedding(n_threads, d_thread, dtype=DTYPE)
        self.stage = nn.Embedding(n_stages, d_stage, dtype=DTYPE)
        nn.init.normal_(self.thread.weight, std=std)
        nn.init.normal_(self.stage.weight, std=std)

    @property
    def dim(self):
        return self.thread.embedding_dim + self.stage.embedding_dim


def carry_forward(ids, mask):
    """Replace padded ids by the last real id of the row (0 for empty rows)."""
    ids = torch.as_tensor(ids)
    mask = torch.as_tensor(mask, dtype=torch.bool)
    T = ids.shape[-1]
    steps = torch.arange(T).expand_as(ids)
    last = torch.cummax(torch.where(mask, steps, torch.zeros_like(steps)), dim=-1).values
    filled = torch.gather(ids, -1, last)
    return torch.where(mask.any(-1, keepdim=True), filled, torch.zeros_like(filled))


def embed_features(threads, stages, mask, tables):
    """``u_t = concat[thread_emb(v_t), stage_emb(h_t)]``; padding repeats the last real row.

    Rows whose mask is all false come back as zeros.
    """
    threads = torch.as_tensor(np.asarray(threads), dtype=torch.long)
    stages = torch.as_tensor(np.asarray(stages), dtype=torch.long)
    mask = torch.as_tensor(np.asarray(mask), dtype=torch.bool)
    for name, ids, n in (("thread", threads, tables.thread.num_embeddings),
                         ("stage", stages, tables.stage.num_embeddings)):
        real = ids[mask]
        if real.numel() and (real.min() < 0 or real.max() >= n):
            raise IndexError(f"{name} id out of range 0..{n - 1}")
    v = tables.thread(carry_forward(threads, mask))
    h = tables.stage(carry_forward(stages, mask))
    u = torch.cat([v, h], dim=-1)
    return u * mask.any(-1, keepdim=True).unsqueeze(-1).to(u.dtype)


def embed_timeline(timeline, tables):
    return embed_features(timeline.v, timeline.h, timeline.mask, tables)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


class PriorNet(nn.Module):
    """Recurrent prior ``p(z_t | z_<t)``; the first step is ``N(0, I)``."""

    def __init__(self, d_z, hidden):
        super().__init__()
        self.rnn = nn.GRU(d_z, hidden, batch_first=True, dtype=DTYPE)
        self.head = nn.Linear(hidden, 2 * d_z, dtype=DTYPE)
        self.d_z = d_z

    def forward(self, z):
        """Prior parameters for every step given samples ``z`` of shape (B, T, D_z)."""
        B, T, _ = z.shape
        first = standard_normal((B, 1, self.d_z), dtype=z.dtype)
        if T == 1:
            return first
        hidden, _ = self.rnn(z[:, :-1])
        rest = _split_params(self.head(hidden))
        return GaussianParams(torch.cat([first.mu, rest.mu], 1), torch.cat([first.log_sigma, rest.log_sigma], 1))

    def step(self, z_prefix):
        """Parameters for the step following ``z_prefix`` (B, t-1, D_z), recomputed from scratch."""
        B, n, _ = z_prefix.shape
        if n == 0:
            return standard_normal((B, self.d_z), dtype=z_prefix.dtype)
        hidden, _ = self.rnn(z_prefix)
        return _split_params(self.head(hidden[:, -1]))


class VaryingEncoder(nn.Module):
    """``q(z_t | u_<=t)``: a causal GRU over the feature sequence."""

    def __init__(self, d_u, d_z, hidden, init_log_sigma=0.0):
        super().__init__()
        self.rnn = nn.GRU(d_u, hidden, batch_first=True, dtype=DTYPE)
        self.head = nn.Linear(hidden, 2 * d_z, dtype=DTYPE)
        _init_log_sigma(self.head, init_log_sigma)

    def forward(self, u):
        hidden, _ = self.rnn(u)
        return _split_params(self.head(hidden))


class InvariantEncoder(nn.Module):
    """``q(x | u_1:T)``: GRU over the whole sequence, one linear layer on its last real state."""

    def __init__(self, d_u, d_x, hidden, init_log_sigma=0.0, mean_gain=1.0):
        super().__init__()
        self.rnn = nn.GRU(d_u, hidden, batch_first=True, dtype=DTYPE)
        self.head = nn.Linear(hidden, 2 * d_x, dtype=DTYPE)
        _init_log_sigma(self.head, init_log_sigma)
        # a zero mean offset keeps patients from starting at one shared point
        with torch.no_grad():
            self.head.bias[:d_x] = 0.0
            self.head.weight[:d_x] *= mean_gain

    def forward(self, u, mask):
        hidden, _ = self.rnn(u)
        mask = torch.as_tensor(mask, dtype=torch.bool)
        last = (mask.sum(-1) - 1).clamp(min=0)
        final = hidden[torch.arange(hidden.shape[0]), last]
        return _split_params(self.head(final))


class Decoder(nn.Module):
    """Two-layer perceptron mapping ``[x_cond, z_t]`` to the mean of ``u_t``."""

    def __init__(self, d_in, d_u, hidden):
        super().__init__()
        self.fc1 = nn.Linear(d_in, hidden, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden, d_u, dtype=DTYPE)

    def forward(self, *parts):
        h = torch.cat(parts, dim=-1) if len(parts) > 1 else parts[0]
        return self.fc2(torch.tanh(self.fc1(h)))


def infer_posteriors(u, mask, varying, invariant=None):
    """Posterior parameters ``(x_params, z_params)``; ``x_params`` is None without an invariant encoder."""
    z_params = varying(u)
    x_params = invariant(u, mask) if invariant is not None else None
    return x_params, z_params


# ---------------------------------------------------------------------------
# sampling and divergences
# ---------------------------------------------------------------------------


def reparameterize(params, noise):
    if params.mu.shape != noise.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != {tuple(params.mu.shape)}")
    return params.mu + params.sigma * noise


def kl_diag_gaussians(q, p):
    """KL(q || p) for diagonal Gaussians, summed over the last axis."""
    if q.mu.shape[-1] != p.mu.shape[-1]:
        raise ValueError("dimension mismatch")
    var_ratio = torch.exp(2.0 * (q.log_sigma - p.log_sigma))
    mean_term = (q.mu - p.mu) ** 2 * torch.exp(-2.0 * p.log_sigma)
    return 0.5 * torch.sum(var_ratio + mean_term - 1.0, dim=-1) + torch.sum(p.log_sigma - q.log_sigma, dim=-1)


def elbo_terms(u, mask, x_params, z_params, recon, prior):
    """Per-patient (reconstruction, KL_x, KL_z) with padded steps zeroed."""
    if u.shape != recon.shape:
        raise ValueError(f"reconstruction shape {tuple(recon.shape)} != {tuple(u.shape)}")
    if z_params.mu.shape != prior.mu.shape:
        raise ValueError("posterior and prior shapes differ")
    maskf = torch.as_tensor(mask, dtype=u.dtype)
    rec = 0.5 * torch.sum(((u - recon) ** 2).sum(-1) * maskf, dim=-1)
    kl_z = torch.sum(kl_diag_gaussians(z_params, prior) * maskf, dim=-1)
    if x_params is None:
        kl_x = torch.zeros_like(rec)
    else:
        kl_x = kl_diag_gaussians(x_params, standard_normal(x_params.mu.shape, dtype=u.dtype))
    return rec, kl_x, kl_z


def elbo_loss(u, mask, x_params, z_params, recon, prior):
    """Negative ELBO with unit-variance Gaussian likelihood, constants dropped, mean over patients."""
    rec, kl_x, kl_z = elbo_terms(u, mask, x_params, z_params, recon, prior)
    return torch.mean(rec + kl_x + kl_z)
