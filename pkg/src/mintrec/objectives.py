"""Smoothness, BPR, monotonic and seniority losses and their weighted sum."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import kernels

log = logging.getLogger(__name__)

COMPONENTS = ("dis", "smo", "bpr", "reg", "cons")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.01  # ELBO
    gamma: float = 0.1  # smoothness
    lam: float = 1.0  # BPR
    beta: float = 0.001  # monotonic regulariser + seniority constraint

    def __post_init__(self):
        for name in ("alpha", "gamma", "lam", "beta"):
            v = getattr(self, name)
            if not v >= 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {v}")

    def of(self, component):
        return {"dis": self.alpha, "smo": self.gamma, "bpr": self.lam, "reg": self.beta, "cons": self.beta}[component]


@dataclass
class TripletBatch:
    """(seeker, positive helper, negative helper) with each patient's step at the positive interaction."""

    seeker: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    seeker_step: np.ndarray
    helper_step: np.ndarray

    def __len__(self):
        return len(self.seeker)

    def subset(self, keep):
        return TripletBatch(self.seeker[keep], self.pos[keep], self.neg[keep],
                            self.seeker_step[keep], self.helper_step[keep])


def _batch_mean(per_row):
    return per_row.mean() if per_row.numel() else per_row.sum()


def smoothness_loss(z, mask):
    """``sum_{t>=2} mask_t ||z_t - z_{t-1}||^2`` averaged over the batch."""
    if z.shape[-2] < 2:
        return z.sum() * 0.0
    maskf = torch.as_tensor(mask, dtype=z.dtype)[..., 1:]
    diff = ((z[..., 1:, :] - z[..., :-1, :]) ** 2).sum(-1)
    return _batch_mean((diff * maskf).sum(-1))


def bpr_loss(e_p, e_q, seeker, pos, neg):
    """``-ln sigmoid(r_pos - r_neg)`` with dot-product scores, averaged over triplets.

    ``seeker`` indexes rows of ``e_p``; ``pos``/``neg`` index rows of ``e_q``.
    """
    seeker, pos, neg = (torch.as_tensor(np.asarray(a), dtype=torch.long) for a in (seeker, pos, neg))
    ea = e_p[seeker]
    diff = (ea * e_q[pos]).sum(-1) - (ea * e_q[neg]).sum(-1)
    return _batch_mean(-F.logsigmoid(diff))


def monotonic_regularizer(z, seniority, mask):
    """``sum_t mask_t sum_i ReLU[(s_t - s_{t-1}) (z_{t-1,i} - z_{t,i})]`` averaged over the batch."""
    s = torch.as_tensor(np.asarray(seniority), dtype=z.dtype)
    if z.shape[-2] < 2:
        return z.sum() * 0.0
    maskf = torch.as_tensor(np.asarray(mask), dtype=z.dtype)[..., 1:]
    ds = (s[..., 1:] - s[..., :-1]).unsqueeze(-1)
    viol = F.relu(ds * (z[..., :-1, :] - z[..., 1:, :])).sum(-1)
    return _batch_mean((viol * maskf).sum(-1))


def seniority_constraint_loss(z_p, z_q, mode="hinge"):
    """Pairwise penalty for seeker latents exceeding helper latents, averaged over pairs.

    ``hinge`` sums ``ReLU(z_p - z_q)`` over dimensions; ``raw`` sums ``z_p - z_q``.
    """
    diff = z_p - z_q
    if mode == "hinge":
        diff = F.relu(diff)
    elif mode != "raw":
        raise ValueError(f"unknown constraint mode {mode!r}")
    return _batch_mean(diff.sum(-1))


def total_objective(components, weights):
    """``alpha*dis + gamma*smo + lam*bpr + beta*(reg + cons)``; missing components count as 0."""
    if not isinstance(weights, LossWeights):
        weights = LossWeights(*weights)
    total = 0.0
    for name in COMPONENTS:
        if name in components:
            w = weights.of(name)
            if w != 0:
                total = total + w * components[name]
    return total


# ---------------------------------------------------------------------------
# negative sampling
# ---------------------------------------------------------------------------


def sample_negatives(positives, helpers, seeker, k, rng):
    """Up to ``k`` helpers with no interaction with ``seeker``, uniformly without replacement.

    ``positives`` maps seeker -> iterable of linked helpers; ``helpers`` is the
    candidate universe.
    """
    pool = np.setdiff1d(np.asarray(helpers), np.asarray(sorted(positives.get(seeker, ()))), assume_unique=False)
    if len(pool) == 0:
        log.warning("seeker %s has no valid negative helper; skipping", seeker)
        return np.zeros(0, dtype=np.int64)
    if k > len(pool):
        log.warning("requested %d negatives but only %d candidates for seeker %s", k, len(pool), seeker)
        return rng.permutation(pool)
    return rng.choice(pool, size=k, replace=False)


class NegativeSampler:
    """Draw one negative helper per triplet from the complement of the seeker's positives."""

    def __init__(self, seekers, helpers_of_pairs, helper_universe, m, backend=None):
        self.helpers = np.unique(np.asarray(helper_universe, dtype=np.int64))
        slot = np.full(m, -1, dtype=np.int64)
        slot[self.helpers] = np.arange(len(self.helpers))
        seekers = np.asarray(seekers, dtype=np.int64)
        pos_slot = slot[np.asarray(helpers_of_pairs, dtype=np.int64)]
        keep = pos_slot >= 0
        pairs = np.unique(np.stack([seekers[keep], pos_slot[keep]], 1), axis=0)
        self.ptr = np.searchsorted(pairs[:, 0], np.arange(m + 1)).astype(np.int64)
        self.pos_sorted = pairs[:, 1].astype(np.int64)
        self.backend = backend

    def pool_size(self, seekers):
        return len(self.helpers) - np.diff(self.ptr)[seekers]

    def draw(self, seekers, rng):
        """One negative per seeker, or ``-1`` when none exists."""
        seekers = np.asarray(seekers, dtype=np.int64)
        size = self.pool_size(seekers)
        r = np.floor(rng.random(len(seekers)) * np.maximum(size, 1)).astype(np.int64)
        slots = kernels.nth_complement(seekers, r, self.ptr, self.pos_sorted, backend=self.backend)
        out = self.helpers[np.minimum(slots, len(self.helpers) - 1)]
        out[size <= 0] = -1
        return out
