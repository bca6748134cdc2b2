"""Binary-relevance ranking metrics over 1-based ranks of the true helper."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels


@dataclass
class RankingResult:
    seeker: int
    true_helper: int
    step: int
    candidates: np.ndarray  # helper ids, best first
    scores: np.ndarray  # aligned with candidates
    rank: int


def _ranks(results):
    if isinstance(results, np.ndarray):
        ranks = results
    else:
        ranks = np.asarray([r.rank if isinstance(r, RankingResult) else r for r in results])
    if ranks.size == 0:
        raise ValueError("metrics need at least one ranking result")
    return ranks.astype(np.float64)


def mrr(results):
    """Mean reciprocal rank, correctly rounded.

    The sum runs in exact rational arithmetic over distinct ranks, so the
    result does not depend on query order or on how floats are accumulated.
    """
    ranks = _ranks(results).astype(np.int64)
    values, counts = np.unique(ranks, return_counts=True)
    total = sum(Fraction(int(c), int(r)) for r, c in zip(values, counts))
    return float(total / len(ranks))


def hit_at_k(results, k):
    if k < 1:
        raise ValueError("K must be >= 1")
    return float(np.mean(_ranks(results) <= k))


def ndcg_at_k(results, k):
    if k < 1:
        raise ValueError("K must be >= 1")
    ranks = _ranks(results)
    gain = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gain))


def ranks_from_scores(scores, target_col, backend=None):
    """1-based rank of each target column; ties go to the lower column index."""
    return kernels.rank_of_target(scores, target_col, backend=backend)


def summary(ranks, ks=(3, 5, 10)):
    """Metrics keyed like the result tables: ``NDCG@K``, ``HIT@K`` and ``MRR``."""
    out = {}
    for k in ks:
        out[f"NDCG@{k}"] = ndcg_at_k(ranks, k)
        out[f"HIT@{k}"] = hit_at_k(ranks, k)
    out["MRR"] = mrr(ranks)
    return out
