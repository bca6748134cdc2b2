"""Symmetric-normalised propagation over the seeker/helper block graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import torch

from .data import BipartiteAdjacency


@dataclass
class PropagatedEmbeddings:
    per_layer: list
    averaged: object
    seeker_view: object = None
    helper_view: object = None


def normalize_adjacency(A):
    """``D^-1/2 A D^-1/2`` with zero-degree rows and columns left at zero.

    Accepts a :class:`BipartiteAdjacency`, a scipy sparse matrix or a dense
    array, and returns the same kind (CSR for sparse input).
    """
    if isinstance(A, BipartiteAdjacency):
        A = A.A
    if sp.issparse(A):
        A = sp.csr_matrix(A, dtype=np.float64)
        deg = np.asarray(A.sum(axis=1)).ravel()
        inv = _inv_sqrt(deg)
        out = sp.diags(inv) @ A @ sp.diags(inv)
        return sp.csr_matrix(out)
    A = np.asarray(A, dtype=np.float64)
    inv = _inv_sqrt(A.sum(axis=1))
    return inv[:, None] * A * inv[None, :]


def _inv_sqrt(deg):
    out = np.zeros_like(deg, dtype=np.float64)
    nz = deg > 0
    out[nz] = 1.0 / np.sqrt(deg[nz])
    return out


def to_torch(a_hat, dtype=torch.float64):
    """Torch operator for a normalised adjacency (sparse stays sparse)."""
    if sp.issparse(a_hat):
        coo = a_hat.tocoo()
        idx = torch.as_tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
        return torch.sparse_coo_tensor(idx, torch.as_tensor(coo.data, dtype=dtype), coo.shape,
                                       check_invariants=False).coalesce()
    return torch.as_tensor(np.asarray(a_hat), dtype=dtype)


def propagate(x, a_hat, L, average="mean"):
    """Light propagation ``e^(l) = A_hat e^(l-1)`` and the layer average.

    ``average="mean"`` weights the L+1 layers by ``1/(L+1)``; ``"over_l"``
    uses ``1/L`` (and ``1`` when ``L == 0``). Works with numpy/scipy or
    torch operands alike.
    """
    if L < 0:
        raise ValueError("L must be >= 0")
    if a_hat.shape[1] != x.shape[0]:
        raise ValueError(f"operator of shape {tuple(a_hat.shape)} cannot act on {tuple(x.shape)}")
    layers = [x]
    for _ in range(L):
        layers.append(a_hat @ layers[-1])
    total = layers[0]
    for e in layers[1:]:
        total = total + e
    if average == "mean":
        denom = L + 1
    elif average == "over_l":
        denom = max(L, 1)
    else:
        raise ValueError(f"unknown layer average {average!r}")
    return PropagatedEmbeddings(per_layer=layers, averaged=total / denom)


def split_views(e, is_seeker, is_helper):
    """Seeker-side rows of flagged seekers and helper-side rows of flagged helpers.

    ``e`` has ``2m`` rows: ``0..m-1`` seeker side, ``m..2m-1`` helper side.
    Returns ``(e_p, e_q, seeker_ids, helper_ids)``.
    """
    is_seeker = np.asarray(is_seeker, dtype=bool)
    is_helper = np.asarray(is_helper, dtype=bool)
    m = len(is_seeker)
    if e.shape[0] != 2 * m:
        raise ValueError(f"expected {2 * m} rows, got {e.shape[0]}")
    seekers = np.flatnonzero(is_seeker)
    helpers = np.flatnonzero(is_helper)
    if isinstance(e, torch.Tensor):
        return e[torch.as_tensor(seekers)], e[torch.as_tensor(m + helpers)], seekers, helpers
    return e[seekers], e[m + helpers], seekers, helpers


def neighbor_operator(seekers, helpers, m):
    """Patient-level ``D^-1/2 (A + I) D^-1/2`` over undirected support edges.

    Used to condition the decoder on a snapshot: one round of normalised
    neighbour aggregation that keeps isolated patients at their own vector.
    """
    rows = np.concatenate([seekers, helpers, np.arange(m)])
    cols = np.concatenate([helpers, seekers, np.arange(m)])
    A = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m)).tocsr()
    A.data[:] = 1.0
    return normalize_adjacency(A)
