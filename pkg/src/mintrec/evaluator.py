"""Ranking protocol, seniority diagnostics and the BPR-MF baseline."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import metrics
from . import objectives as obj
from . import trainer as tr
from .vae import DTYPE

log = logging.getLogger(__name__)

DEFAULT_KS = (3, 5, 10)


class UnknownSeeker(KeyError):
    pass


def rank_helpers(scorer, seeker, true_helper, candidates=None, step=-1):
    """Score every candidate helper for one seeker and locate the true helper.

    Ties are broken by ascending helper id.
    """
    if not scorer_knows_seeker(scorer, seeker):
        raise UnknownSeeker(f"seeker {seeker} was not seen as a seeker in training")
    cand = np.asarray(scorer.train_helpers if candidates is None else candidates, dtype=np.int64)
    order_ids = np.sort(cand)
    if true_helper not in set(order_ids.tolist()):
        raise ValueError(f"true helper {true_helper} not among candidates")
    scores = np.asarray(scorer.helper_scores([seeker], order_ids))[0]
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite candidate score")
    order = np.lexsort((order_ids, -scores))
    col = int(np.searchsorted(order_ids, true_helper))
    rank = int(metrics.ranks_from_scores(scores[None, :], np.array([col]))[0])
    return metrics.RankingResult(seeker=int(seeker), true_helper=int(true_helper), step=int(step),
                                 candidates=order_ids[order], scores=scores[order], rank=rank)


def scorer_knows_seeker(scorer, seeker):
    return 0 <= seeker < len(scorer.known_seeker_mask) and bool(scorer.known_seeker_mask[seeker])


def evaluate_ranks(scorer, queries):
    """1-based rank of the true helper for every query (full-candidate protocol)."""
    if len(queries["seeker"]) == 0:
        raise ValueError("no evaluable queries")
    return tr.rank_queries(scorer, queries)


def query_set_hash(queries):
    h = hashlib.sha256()
    for key in ("seeker", "helper", "step"):
        h.update(np.ascontiguousarray(queries[key], dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def null_hit_at_k(n_candidates, k):
    """Expected HIT@K of a uniformly random ranking."""
    return min(k, n_candidates) / n_candidates


def permutation_null(queries, n_candidates, ks=DEFAULT_KS, n_perm=200, seed=0):
    """Metric means under uniformly random rankings, by simulation."""
    rng = np.random.default_rng(seed)
    n = len(queries["seeker"])
    ranks = rng.integers(1, n_candidates + 1, size=(n_perm, n))
    return {name: float(np.mean([metrics.summary(r, ks)[name] for r in ranks]))
            for name in metrics.summary(ranks[0], ks)}


def evaluate(scorer, queries, ks=DEFAULT_KS):
    ranks = evaluate_ranks(scorer, queries)
    return metrics.summary(ranks, ks)


# ---------------------------------------------------------------------------
# seniority diagnostics
# ---------------------------------------------------------------------------


def seniority_diagnostics(model, dataset, queries):
    """Ordering checks on posterior-mean time-varying latents.

    Returns the mean hinge violation over the queries' true pairs, the share
    of top-1 recommendations whose helper is more senior than the seeker at
    the query step, and the mean per-patient share of latent dimensions
    that did not fall where seniority rose.
    """
    z = model.z_means().numpy()
    seekers, helpers, steps = queries["seeker"], queries["helper"], queries["step"]
    h_steps = _helper_steps(dataset, queries)
    z_p = z[seekers, steps]
    z_q = z[helpers, h_steps]
    violation = float(np.mean(np.maximum(z_p - z_q, 0.0).sum(-1))) if len(seekers) else float("nan")

    cand = model.train_helpers
    scores = model.helper_scores(seekers, cand)
    top = cand[np.argmax(scores, axis=1)] if len(seekers) else np.zeros(0, dtype=np.int64)
    top_steps = _steps_at(dataset, top, queries.get("timestamp"), h_steps)
    s_seek = dataset.seniority[seekers, steps]
    o_top = dataset.seniority[top, top_steps]
    top1_senior = float(np.mean(o_top > s_seek)) if len(seekers) else float("nan")

    return {
        "mean_hinge_violation": violation,
        "top1_senior_fraction": top1_senior,
        "monotone_fraction": monotone_fraction(z, dataset.seniority, dataset.mask),
    }


def monotone_fraction(z, seniority, mask):
    """Mean over patients of the share of latent dimensions that do not decrease
    at steps where seniority strictly increased."""
    rise = (seniority[:, 1:] > seniority[:, :-1]) & mask[:, 1:]
    ok = z[:, 1:, :] >= z[:, :-1, :]
    per_patient = []
    for p in range(z.shape[0]):
        r = rise[p]
        if r.any():
            per_patient.append(ok[p][r].mean())
    return float(np.mean(per_patient)) if per_patient else float("nan")


def _helper_steps(dataset, queries):
    if "helper_step" in queries:
        return queries["helper_step"]
    return np.zeros(len(queries["seeker"]), dtype=np.int64)


def _steps_at(dataset, patients, timestamps, fallback):
    if timestamps is None or dataset.activities is None:
        return fallback
    from .data import interaction_steps, _group_ptr

    ptr = _group_ptr(dataset.activities.patient, dataset.m)
    return interaction_steps(patients, timestamps, dataset.activities, ptr, dataset.T)


def diagnostic_queries(dataset, split="test"):
    """Evaluation queries carrying both patients' steps and the timestamp."""
    q = tr.eval_queries(dataset, split)
    p = dataset.pair_rows(split)
    seekers, helpers, _, _ = tr.train_pairs(dataset)
    known_s = np.zeros(dataset.m, dtype=bool)
    known_h = np.zeros(dataset.m, dtype=bool)
    known_s[seekers] = True
    known_h[helpers] = True
    keep = known_s[p["seeker"]] & known_h[p["helper"]]
    q["helper_step"] = p["helper_step"][keep]
    q["timestamp"] = p["timestamp"][keep]
    return q


# ---------------------------------------------------------------------------
# BPR-MF baseline
# ---------------------------------------------------------------------------


class BaselineBprMf(nn.Module):
    """Free seeker and helper embedding tables scored by dot product."""

    def __init__(self, m, dim=16):
        super().__init__()
        self.seeker = nn.Embedding(m, dim, dtype=DTYPE)
        self.helper = nn.Embedding(m, dim, dtype=DTYPE)
        nn.init.normal_(self.seeker.weight, std=0.1)
        nn.init.normal_(self.helper.weight, std=0.1)
        self.known_seeker_mask = np.zeros(m, dtype=bool)
        self.train_helpers = np.zeros(0, dtype=np.int64)

    def loss(self, batch):
        return obj.bpr_loss(self.seeker.weight, self.helper.weight, batch.seeker, batch.pos, batch.neg)

    @torch.no_grad()
    def helper_scores(self, seekers, helpers=None):
        helpers = self.train_helpers if helpers is None else np.asarray(helpers)
        e_p = self.seeker.weight[torch.as_tensor(np.asarray(seekers), dtype=torch.long)]
        e_q = self.helper.weight[torch.as_tensor(helpers, dtype=torch.long)]
        return (e_p @ e_q.T).numpy()


@dataclass
class BaselineResult:
    model: BaselineBprMf
    trace: list  # (epoch, "bpr", value)
    best_epoch: int
    valid_trace: list = None  # (epoch, "NDCG", K, value)


def train_baseline(dataset, config=None, dim=16):
    """BPR-only training of :class:`BaselineBprMf` with the trainer's batching and defaults."""
    config = tr.TrainConfig() if config is None else config
    torch.manual_seed(config.seed)
    model = BaselineBprMf(dataset.m, dim)
    pairs = tr.train_pairs(dataset)
    model.known_seeker_mask[pairs[0]] = True
    model.train_helpers = np.unique(pairs[1])
    rng = np.random.default_rng(config.seed)
    sampler = obj.NegativeSampler(pairs[0], pairs[1], model.train_helpers, dataset.m)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    valid = tr.eval_queries(dataset, "valid")
    trace, valid_trace = [], []
    with torch.no_grad():
        init_rng = np.random.default_rng([config.seed, 1])
        tot, cnt = 0.0, 0
        for idx in tr.iter_batches(len(pairs[0]), config.batch_size, init_rng):
            b = tr.make_batch(idx, pairs, sampler, init_rng)
            tot += float(model.loss(b)) * len(b)
            cnt += len(b)
        trace.append((0, "bpr", tot / cnt))
    best = (-np.inf, 0, None)
    stale = 0
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        tot, cnt = 0.0, 0
        for idx in tr.iter_batches(len(pairs[0]), config.batch_size, rng):
            batch = tr.make_batch(idx, pairs, sampler, rng)
            if len(batch) == 0:
                continue
            loss = model.loss(batch)
            if not torch.isfinite(loss):
                raise tr.TrainingDiverged("bpr", epoch, float(loss))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            tot += float(loss.detach()) * len(batch)
            cnt += len(batch)
        trace.append((epoch, "bpr", tot / cnt))
        score = tr.validation_ndcg(model, valid, config.eval_k)
        valid_trace.append((epoch, "NDCG", config.eval_k, score))
        if not np.isnan(score):
            if score > best[0]:
                best = (score, epoch, {k: v.clone() for k, v in model.state_dict().items()})
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
    if best[2] is not None:
        model.load_state_dict(best[2])
    return BaselineResult(model=model, trace=trace, best_epoch=best[1] if best[2] is not None else epoch,
                          valid_trace=valid_trace)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def write_metrics_csv(path, rows):
    """``rows``: iterable of (model, metric, K, value); K is empty for MRR."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "K", "value", "model"])
        for model_name, metric, k, value in rows:
            w.writerow([metric, "" if k is None else k, repr(float(value)), model_name])


def summary_rows(model_name, summary):
    rows = []
    for key, value in summary.items():
        if "@" in key:
            name, k = key.split("@")
            rows.append((model_name, name, int(k), value))
        else:
            rows.append((model_name, key, None, value))
    return rows


def write_summary_json(path, summaries, extra=None):
    payload = {"columns": ["NDCG@3", "HIT@3", "NDCG@5", "HIT@5", "NDCG@10", "HIT@10", "MRR"],
               "models": summaries}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
