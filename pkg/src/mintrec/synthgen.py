"""Synthetic OHC datasets with planted seniority structure.

Each patient gets a latent expertise scalar that drives how long they stay,
how many threads they visit and how many health stages they pass through, so
seniority tracks expertise. Interactions are then planted so that, except for
a ``noise_rate`` fraction, the helper's seniority at interaction time exceeds
the seeker's by at least ``seniority_gap``. Ground truth goes to a sidecar
file that the model never reads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import data, kernels

log = logging.getLogger(__name__)

GROUND_TRUTH_FILE = "ground_truth.json"
DEFAULT_EPOCH = 1388534400  # 2014-01-01T00:00:00Z
_MAX_TRIES = 200


@dataclass(frozen=True)
class GeneratorConfig:
    n_patients: int = 500
    n_threads: int = 120
    n_stages: int = 6
    n_interactions: int = 5000
    T: int = 10
    seniority_gap: float = 0.05
    noise_rate: float = 0.05
    seed: int = 0
    n_seekers: int | None = None
    n_helpers: int | None = None
    n_communities: int = 4
    span_days: int = 1826
    epoch: int = DEFAULT_EPOCH

    def validate(self):
        if self.n_patients < 2:
            raise ValueError("n_patients must be >= 2")
        if self.n_interactions < 1:
            raise ValueError("n_interactions must be >= 1")
        if not 0.0 < self.seniority_gap <= 1.0:
            raise ValueError("seniority_gap must lie in (0, 1]")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("noise_rate must lie in [0, 1)")
        if self.n_threads < 1 or self.n_stages < 1 or self.T < 1:
            raise ValueError("n_threads, n_stages and T must be >= 1")
        if self.n_communities < 1 or self.span_days < 1:
            raise ValueError("n_communities and span_days must be >= 1")
        a, b = self.role_counts()
        if not (1 <= a <= self.n_patients and 1 <= b <= self.n_patients):
            raise ValueError(f"role counts ({a}, {b}) must lie in 1..n_patients")
        if a + b < 2:
            raise ValueError("need at least two distinct patients holding roles")
        if self.n_interactions < max(a, b):
            raise ValueError(
                f"infeasible config: {self.n_interactions} interactions cannot cover "
                f"{a} seekers and {b} helpers")
        return self

    def role_counts(self):
        m = self.n_patients
        a = self.n_seekers if self.n_seekers is not None else max(1, int(round(0.6 * m)))
        b = self.n_helpers if self.n_helpers is not None else max(1, int(round(0.8 * m)))
        return a, b


BREAST_SCALE = dict(n_patients=3948, n_seekers=719, n_helpers=3827, n_interactions=16360)
BLADDER_SCALE = dict(n_patients=296, n_seekers=189, n_helpers=243, n_interactions=9867)


# ---------------------------------------------------------------------------
# activity histories
# ---------------------------------------------------------------------------


def _thread_pools(cfg):
    ids = np.arange(cfg.n_threads)
    comm = ids % cfg.n_communities
    stage = (ids // cfg.n_communities) % cfg.n_stages
    return {(c, s): ids[(comm == c) & (stage == s)] for c in range(cfg.n_communities) for s in range(cfg.n_stages)}


def _simulate_activities(cfg, rng, expertise, community):
    m = cfg.n_patients
    span = cfg.span_days * 86400
    pools = _thread_pools(cfg)
    rows = []
    for p in range(m):
        e = expertise[p]
        k = int(min(cfg.n_stages, 1 + np.floor(e * (cfg.n_stages - 1) + rng.uniform(0.0, 1.0))))
        start_stage = int(min(rng.geometric(0.6) - 1, cfg.n_stages - k))
        n_ev = int(2 + rng.poisson(3.0 + 15.0 * e))
        dur = int(span * (0.05 + 0.6 * e) * rng.uniform(0.6, 1.0))
        t0 = int(rng.integers(0, span - dur + 1))
        times = np.sort(rng.integers(t0, t0 + dur + 1, size=n_ev)) + cfg.epoch
        stages = start_stage + (np.arange(n_ev) * k) // n_ev
        for t, s in zip(times, stages):
            pool = pools[(int(community[p]), int(s))]
            if len(pool) and rng.uniform() < 0.8:
                thread = int(pool[rng.integers(len(pool))])
            else:
                thread = int(rng.integers(cfg.n_threads))
            rows.append((p, int(t), thread, int(s)))
    arr = np.asarray(rows, dtype=np.int64)
    return data.sort_activities(data.ActivityLog(*(arr[:, i].copy() for i in range(4))))


def _first_visits(acts, n_threads):
    """Sorted ``thread * stride + patient`` keys with the first visit time of each."""
    stride = int(acts.patient.max()) + 1
    keys = acts.thread * stride + acts.patient
    order = np.lexsort((acts.timestamp, keys))
    keys, ts = keys[order], acts.timestamp[order]
    first = np.ones(len(keys), dtype=bool)
    first[1:] = keys[1:] != keys[:-1]
    keys, ts = keys[first], ts[first]
    ptr = np.searchsorted(keys // stride, np.arange(n_threads + 1))
    return {"stride": stride, "keys": keys, "first": ts, "ptr": ptr}


def seniority_at(patients, timestamps, acts, sen, ptr):
    """Seniority of each patient at each timestamp (0 before their first event)."""
    keys = acts.timestamp + acts.patient * kernels._OFFSET
    q = np.asarray(timestamps, dtype=np.int64) + np.asarray(patients, dtype=np.int64) * kernels._OFFSET
    pos = np.searchsorted(keys, q, side="right") - 1
    ok = pos >= ptr[patients]
    out = np.zeros(len(q))
    out[ok] = sen[pos[ok]]
    return out


def thread_overlap(patients, threads, timestamps, visits):
    """Whether each patient had visited the thread at or before the timestamp."""
    q = np.asarray(threads, dtype=np.int64) * visits["stride"] + np.asarray(patients, dtype=np.int64)
    pos = np.searchsorted(visits["keys"], q)
    pos_c = np.minimum(pos, len(visits["keys"]) - 1)
    found = (pos < len(visits["keys"])) & (visits["keys"][pos_c] == q)
    return found & (visits["first"][pos_c] <= np.asarray(timestamps))


# ---------------------------------------------------------------------------
# interaction planting
# ---------------------------------------------------------------------------


class _Planter:
    def __init__(self, cfg, rng, acts, expertise, is_seeker, is_helper):
        self.cfg, self.rng, self.acts = cfg, rng, acts
        self.m = cfg.n_patients
        self.sen, _, self.ptr = data.seniority_per_event(acts, self.m, cfg.n_threads, cfg.n_stages)
        self.expertise = expertise
        self.is_seeker, self.is_helper = is_seeker, is_helper
        self.visits = _first_visits(acts, cfg.n_threads)
        self.seekers = np.flatnonzero(is_seeker)
        w = 1.0 / (expertise[self.seekers] + 0.05)
        self.seeker_p = w / w.sum()
        self.seen = set()
        self.rows = []
        self.noisy = []

    def _visited(self, thread, tau):
        v = self.visits
        lo, hi = v["ptr"][thread], v["ptr"][thread + 1]
        out = np.zeros(self.m, dtype=bool)
        out[(v["keys"][lo:hi] % v["stride"])[v["first"][lo:hi] <= tau]] = True
        return out

    def _choose(self, candidates, weights):
        w = weights[candidates]
        return int(candidates[self.rng.choice(len(candidates), p=w / w.sum())])

    def helper_for_event(self, j, noisy):
        seeker = int(self.acts.patient[j])
        tau = int(self.acts.timestamp[j])
        thread = int(self.acts.thread[j])
        sen_all = kernels.value_at_time(self.ptr, self.acts.timestamp, self.sen, tau)
        ok = (sen_all - sen_all[seeker]) >= self.cfg.seniority_gap
        target = self.is_helper & (ok != noisy)
        target[seeker] = False
        cands = np.flatnonzero(target)
        if len(cands) == 0:
            return None
        overlap = cands[self._visited(thread, tau)[cands]]
        pool = overlap if len(overlap) else cands
        for _ in range(4):
            helper = self._choose(pool, self.expertise + 0.01)
            if (seeker, helper, thread, tau) not in self.seen:
                return helper
        return None

    def add(self, j, helper, noisy):
        row = (int(self.acts.patient[j]), helper, int(self.acts.thread[j]), int(self.acts.timestamp[j]))
        self.seen.add(row)
        self.rows.append(row)
        self.noisy.append(bool(noisy))

    def cover_seeker(self, p, noisy):
        events = np.arange(self.ptr[p], self.ptr[p + 1])
        for j in self.rng.permutation(events):
            h = self.helper_for_event(int(j), noisy)
            if h is not None:
                self.add(int(j), h, noisy)
                return True
        return False

    def cover_helper(self, h, noisy):
        ev = np.flatnonzero(self.is_seeker[self.acts.patient] & (self.acts.patient != h))
        if len(ev) == 0:
            return False
        taus = self.acts.timestamp[ev]
        s_h = seniority_at(np.full(len(ev), h), taus, self.acts, self.sen, self.ptr)
        s_p = seniority_at(self.acts.patient[ev], taus, self.acts, self.sen, self.ptr)
        ok = (s_h - s_p) >= self.cfg.seniority_gap
        ev = ev[ok != noisy]
        if len(ev) == 0:
            return False
        ov = thread_overlap(np.full(len(ev), h), self.acts.thread[ev], self.acts.timestamp[ev], self.visits)
        pool = ev[ov] if ov.any() else ev
        w = 1.0 / (self.expertise[self.acts.patient[pool]] + 0.05)
        for _ in range(4):
            j = int(pool[self.rng.choice(len(pool), p=w / w.sum())])
            key = (int(self.acts.patient[j]), h, int(self.acts.thread[j]), int(self.acts.timestamp[j]))
            if key not in self.seen:
                self.add(j, h, noisy)
                return True
        return False

    def free(self, noisy):
        for _ in range(_MAX_TRIES):
            p = int(self.seekers[self.rng.choice(len(self.seekers), p=self.seeker_p)])
            j = int(self.rng.integers(self.ptr[p], self.ptr[p + 1]))
            h = self.helper_for_event(j, noisy)
            if h is not None:
                self.add(j, h, noisy)
                return True
        return False


def _assign_roles(cfg, expertise):
    a, b = cfg.role_counts()
    order = np.argsort(expertise, kind="stable")
    is_seeker = np.zeros(cfg.n_patients, dtype=bool)
    is_helper = np.zeros(cfg.n_patients, dtype=bool)
    is_seeker[order[:a]] = True
    is_helper[order[cfg.n_patients - b:]] = True
    return is_seeker, is_helper


def simulate(cfg):
    """Generate in memory: ``(interactions, activities, ground_truth)``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    m = cfg.n_patients
    expertise = rng.uniform(0.0, 1.0, size=m)
    community = rng.integers(0, cfg.n_communities, size=m)
    acts = _simulate_activities(cfg, rng, expertise, community)
    is_seeker, is_helper = _assign_roles(cfg, expertise)
    planter = _Planter(cfg, rng, acts, expertise, is_seeker, is_helper)

    # coverage may fall back to the other kind of pair, but never plants
    # against the order when the noise rate is zero
    flip_ok = cfg.noise_rate > 0
    uncovered = 0
    for p in rng.permutation(np.flatnonzero(is_seeker)):
        noisy = rng.uniform() < cfg.noise_rate
        if not (planter.cover_seeker(int(p), noisy) or (flip_ok and planter.cover_seeker(int(p), not noisy))):
            uncovered += 1
    used_helpers = {r[1] for r in planter.rows}
    for h in rng.permutation(np.flatnonzero(is_helper)):
        if int(h) in used_helpers or len(planter.rows) >= cfg.n_interactions:
            continue
        noisy = rng.uniform() < cfg.noise_rate
        if not (planter.cover_helper(int(h), noisy) or (flip_ok and planter.cover_helper(int(h), not noisy))):
            uncovered += 1
    if uncovered:
        log.warning("%d designated patients could not be given a planted interaction", uncovered)
    while len(planter.rows) < cfg.n_interactions:
        noisy = rng.uniform() < cfg.noise_rate
        if not planter.free(noisy):
            raise RuntimeError("could not plant further interactions; config too constrained")
    rows = np.asarray(planter.rows, dtype=np.int64)
    noisy = np.asarray(planter.noisy, dtype=bool)
    inter = data.InteractionLog(*(rows[:, i].copy() for i in range(4)))
    order = np.lexsort((inter.thread, inter.helper, inter.seeker, inter.timestamp))
    inter = data.InteractionLog(*(getattr(inter, k)[order] for k in ("seeker", "helper", "thread", "timestamp")))
    truth = {
        "config": asdict(cfg),
        "expertise": [float(x) for x in expertise],
        "community": [int(c) for c in community],
        "designated_seeker": [int(x) for x in np.flatnonzero(is_seeker)],
        "designated_helper": [int(x) for x in np.flatnonzero(is_helper)],
        "noisy": [int(x) for x in noisy[order]],
    }
    return inter, acts, truth


def generate(cfg, out_dir):
    """Write a dataset bundle plus ``ground_truth.json``; returns the bundle meta."""
    inter, acts, truth = simulate(cfg)
    out_dir = Path(out_dir)
    meta = data.save_bundle(out_dir, inter, acts, cfg.T, extra_meta={"generator_seed": cfg.seed})
    with open(out_dir / GROUND_TRUTH_FILE, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, sort_keys=True)
        fh.write("\n")
    return meta


def ground_truth_report(bundle_dir):
    """Measured planting statistics for a generated bundle."""
    bundle_dir = Path(bundle_dir)
    sidecar = bundle_dir / GROUND_TRUTH_FILE
    if not sidecar.exists():
        raise FileNotFoundError(f"{bundle_dir} has no {GROUND_TRUTH_FILE}; not a generated bundle")
    with open(sidecar, encoding="utf-8") as fh:
        truth = json.load(fh)
    cfg = truth["config"]
    inter = data.read_interactions(bundle_dir / data.INTERACTIONS_FILE)
    acts = data.sort_activities(data.read_activities(bundle_dir / data.ACTIVITIES_FILE))
    m = int(acts.patient.max()) + 1
    n_threads = int(max(acts.thread.max(), inter.thread.max())) + 1
    n_stages = int(acts.stage.max()) + 1
    sen, _, ptr = data.seniority_per_event(acts, m, n_threads, n_stages)
    s_seek = seniority_at(inter.seeker, inter.timestamp, acts, sen, ptr)
    s_help = seniority_at(inter.helper, inter.timestamp, acts, sen, ptr)
    gap = s_help - s_seek
    overlap = thread_overlap(inter.helper, inter.thread, inter.timestamp, _first_visits(acts, n_threads))
    return {
        "n_interactions": int(len(inter)),
        "satisfaction_rate": float(np.mean(gap >= cfg["seniority_gap"])),
        "strict_order_rate": float(np.mean(gap > 0)),
        "planted_noise_fraction": float(np.mean(truth["noisy"])),
        "thread_overlap_rate": float(np.mean(overlap)),
        "expertise": truth["expertise"],
        "n_seekers": int(len(np.unique(inter.seeker))),
        "n_helpers": int(len(np.unique(inter.helper))),
    }
