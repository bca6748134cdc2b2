"""Dataset files, patient timelines, seniority and the dynamic support graph."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import kernels

log = logging.getLogger(__name__)

INTERACTIONS_FILE = "interactions.csv"
ACTIVITIES_FILE = "activities.csv"
META_FILE = "meta.json"
INTERACTIONS_HEADER = ("seeker_id", "helper_id", "thread_id", "timestamp")
ACTIVITIES_HEADER = ("patient_id", "timestamp", "thread_id", "stage_id")
SECONDS_PER_DAY = 86400.0


class DatasetError(ValueError):
    """Raised for malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class DataConfig:
    T: int = 10
    epoch: int = 0
    seniority_weights: tuple = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if len(self.seniority_weights) != 3 or any(w < 0 for w in self.seniority_weights):
            raise ValueError("seniority_weights must be three non-negative reals")


@dataclass(frozen=True)
class Interaction:
    seeker: int
    helper: int
    thread: int
    timestamp: int


@dataclass(frozen=True)
class ActivityEvent:
    patient: int
    timestamp: int
    thread: int
    stage: int


@dataclass(frozen=True)
class InteractionLog:
    seeker: np.ndarray
    helper: np.ndarray
    thread: np.ndarray
    timestamp: np.ndarray

    def __len__(self):
        return len(self.seeker)

    def rows(self):
        for row in zip(self.seeker, self.helper, self.thread, self.timestamp):
            yield Interaction(*(int(v) for v in row))

    @classmethod
    def from_records(cls, records):
        arr = np.asarray([(r.seeker, r.helper, r.thread, r.timestamp) for r in records], dtype=np.int64)
        arr = arr.reshape(-1, 4)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy())


@dataclass(frozen=True)
class ActivityLog:
    patient: np.ndarray
    timestamp: np.ndarray
    thread: np.ndarray
    stage: np.ndarray

    def __len__(self):
        return len(self.patient)

    def rows(self):
        for row in zip(self.patient, self.timestamp, self.thread, self.stage):
            yield ActivityEvent(*(int(v) for v in row))

    @classmethod
    def from_records(cls, records):
        arr = np.asarray([(r.patient, r.timestamp, r.thread, r.stage) for r in records], dtype=np.int64)
        arr = arr.reshape(-1, 4)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), arr[:, 3].copy())


@dataclass(frozen=True)
class SeniorityScale:
    """Dataset-wide maxima used to normalise the three seniority factors."""

    max_threads: float
    max_stages: float
    max_tenure_days: float


@dataclass(frozen=True, eq=False)
class PatientTimeline:
    patient: int
    v: np.ndarray  # thread ids, -1 on padding
    h: np.ndarray  # stage ids, -1 on padding
    seniority: np.ndarray
    mask: np.ndarray
    timestamp: np.ndarray  # -1 on padding

    @property
    def T(self):
        return len(self.v)

    @property
    def length(self):
        return int(self.mask.sum())

    def __eq__(self, other):
        if not isinstance(other, PatientTimeline):
            return NotImplemented
        return self.patient == other.patient and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("v", "h", "seniority", "mask", "timestamp")
        )


@dataclass(frozen=True, eq=False)
class DynamicSupportGraph:
    """Cumulative seeker->helper snapshots over the T discretised steps.

    ``pairs`` holds one row per interaction. Steps are 0-based indices into
    each patient's timeline; snapshot ``E_t`` (1-based ``t``) contains the
    pairs whose seeker step is ``< t``.
    """

    m: int
    T: int
    n_threads: int
    n_stages: int
    pairs: dict = field(repr=False)
    is_seeker: np.ndarray = field(repr=False)
    is_helper: np.ndarray = field(repr=False)

    @property
    def n_pairs(self):
        return len(self.pairs["seeker"])

    def edges(self, t):
        """Distinct (seeker, helper) edges of snapshot ``E_t``, ``1 <= t <= T``."""
        if not 1 <= t <= self.T:
            raise ValueError(f"step {t} outside 1..{self.T}")
        keep = self.pairs["seeker_step"] < t
        return _unique_edges(self.pairs["seeker"][keep], self.pairs["helper"][keep])

    @property
    def snapshots(self):
        return [self.edges(t) for t in range(1, self.T + 1)]

    def __eq__(self, other):
        if not isinstance(other, DynamicSupportGraph):
            return NotImplemented
        same = (self.m, self.T, self.n_threads, self.n_stages) == (
            other.m, other.T, other.n_threads, other.n_stages)
        return (
            same
            and self.pairs.keys() == other.pairs.keys()
            and all(np.array_equal(self.pairs[k], other.pairs[k]) for k in self.pairs)
            and np.array_equal(self.is_seeker, other.is_seeker)
            and np.array_equal(self.is_helper, other.is_helper)
        )


@dataclass(frozen=True, eq=False)
class BipartiteAdjacency:
    A: sp.csr_matrix
    R: sp.csr_matrix
    degree: np.ndarray

    @property
    def m(self):
        return self.R.shape[0]


@dataclass
class Dataset:
    """Everything the model needs, already aligned on dense patient ids."""

    graph: DynamicSupportGraph
    timelines: list
    threads: np.ndarray  # (m, T) int, -1 padded
    stages: np.ndarray
    seniority: np.ndarray  # (m, T) float
    mask: np.ndarray  # (m, T) bool
    split: dict  # name -> pair indices (chronological)
    interactions: InteractionLog | None = None
    activities: ActivityLog | None = None
    fingerprint: str = ""

    @property
    def m(self):
        return self.graph.m

    @property
    def T(self):
        return self.graph.T

    def pair_rows(self, name):
        idx = self.split[name]
        return {k: v[idx] for k, v in self.graph.pairs.items()}


# ---------------------------------------------------------------------------
# file io
# ---------------------------------------------------------------------------


def _read_int_csv(path, header, what):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{what} file not found: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file (expected header {','.join(header)})") from None
        if tuple(c.strip() for c in first) != header:
            raise DatasetError(f"{path}:1: bad header {first!r}, expected {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                vals = [int(c) for c in row]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-integer field in {row!r}") from None
            if any(v < 0 for v in vals):
                raise DatasetError(f"{path}:{lineno}: negative value in {row!r}")
            rows.append(vals)
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, len(header))
    return arr


def read_interactions(path, epoch=0):
    arr = _read_int_csv(path, INTERACTIONS_HEADER, "interactions")
    bad = np.flatnonzero(arr[:, 0] == arr[:, 1])
    if len(bad):
        raise DatasetError(f"{path}:{bad[0] + 2}: seeker equals helper ({arr[bad[0], 0]})")
    early = np.flatnonzero(arr[:, 3] < epoch)
    if len(early):
        raise DatasetError(f"{path}:{early[0] + 2}: timestamp {arr[early[0], 3]} before dataset epoch {epoch}")
    return InteractionLog(*(arr[:, i].copy() for i in range(4)))


def read_activities(path, epoch=0):
    arr = _read_int_csv(path, ACTIVITIES_HEADER, "activities")
    early = np.flatnonzero(arr[:, 1] < epoch)
    if len(early):
        raise DatasetError(f"{path}:{early[0] + 2}: timestamp {arr[early[0], 1]} before dataset epoch {epoch}")
    return ActivityLog(*(arr[:, i].copy() for i in range(4)))


def write_interactions(path, log_):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(INTERACTIONS_HEADER) + "\n")
        for row in zip(log_.seeker.tolist(), log_.helper.tolist(), log_.thread.tolist(), log_.timestamp.tolist()):
            fh.write("%d,%d,%d,%d\n" % row)


def write_activities(path, log_):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(ACTIVITIES_HEADER) + "\n")
        for row in zip(log_.patient.tolist(), log_.timestamp.tolist(), log_.thread.tolist(), log_.stage.tolist()):
            fh.write("%d,%d,%d,%d\n" % row)


def save_bundle(directory, interactions, activities, T, extra_meta=None):
    """Write a dataset bundle (both CSVs plus ``meta.json``) in canonical order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    interactions = sort_interactions(interactions)
    activities = sort_activities(activities)
    write_interactions(directory / INTERACTIONS_FILE, interactions)
    write_activities(directory / ACTIVITIES_FILE, activities)
    meta = bundle_meta(interactions, activities, T)
    if extra_meta:
        meta.update(extra_meta)
    with open(directory / META_FILE, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def bundle_meta(interactions, activities, T):
    m = int(activities.patient.max()) + 1 if len(activities) else 0
    n_threads = int(max(activities.thread.max(initial=-1), interactions.thread.max(initial=-1))) + 1
    return {
        "format": "mintrec-bundle",
        "version": 1,
        "T": int(T),
        "n_patients": m,
        "n_threads": n_threads,
        "n_stages": int(activities.stage.max(initial=-1)) + 1,
        "n_interactions": len(interactions),
        "n_activities": len(activities),
        "n_seekers": int(len(np.unique(interactions.seeker))),
        "n_helpers": int(len(np.unique(interactions.helper))),
    }


def read_meta(directory):
    path = Path(directory) / META_FILE
    if not path.exists():
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# ordering and cleaning
# ---------------------------------------------------------------------------


def sort_interactions(log_):
    order = np.lexsort((log_.thread, log_.helper, log_.seeker, log_.timestamp))
    return InteractionLog(log_.seeker[order], log_.helper[order], log_.thread[order], log_.timestamp[order])


def sort_activities(log_):
    order = np.lexsort((log_.stage, log_.thread, log_.timestamp, log_.patient))
    return ActivityLog(log_.patient[order], log_.timestamp[order], log_.thread[order], log_.stage[order])


def _drop_exact_duplicates(arr, what):
    if len(arr) == 0:
        return arr
    uniq = np.unique(arr, axis=0)
    if len(uniq) < len(arr):
        log.warning("dropped %d exact-duplicate %s rows", len(arr) - len(uniq), what)
    return uniq


def _group_ptr(sorted_keys, n_groups):
    return np.searchsorted(sorted_keys, np.arange(n_groups + 1), side="left").astype(np.int64)


# ---------------------------------------------------------------------------
# seniority
# ---------------------------------------------------------------------------


def compute_seniority(threads_so_far, stages_so_far, tenure_days, scale, weights=None):
    """Seniority after a prefix of activity.

    Distinct threads, distinct stages and tenure are each divided by their
    dataset-wide maximum and combined with ``weights`` (equal thirds by
    default). A zero maximum makes its term contribute 0.
    """
    if len(threads_so_far) == 0:
        raise ValueError("seniority needs a non-empty activity prefix")
    w = (1.0 / 3.0,) * 3 if weights is None else weights
    n_threads = len(set(int(v) for v in threads_so_far))
    n_stages = len(set(int(v) for v in stages_so_far))
    terms = (
        _ratio(n_threads, scale.max_threads),
        _ratio(n_stages, scale.max_stages),
        _ratio(tenure_days, scale.max_tenure_days),
    )
    return float(sum(wi * ti for wi, ti in zip(w, terms)))


def _ratio(num, den):
    return 0.0 if den <= 0 else num / den


def seniority_factors(activities, m, n_threads, n_stages):
    """Per-event running (distinct threads, distinct stages, tenure days).

    ``activities`` must be sorted by (patient, timestamp).
    """
    ptr = _group_ptr(activities.patient, m)
    n_thr = kernels.running_distinct(ptr, activities.thread, n_threads)
    n_stg = kernels.running_distinct(ptr, activities.stage, n_stages)
    sizes = np.diff(ptr)
    first_ts = np.repeat(activities.timestamp[ptr[:-1][sizes > 0]], sizes[sizes > 0])
    tenure = (activities.timestamp - first_ts) / SECONDS_PER_DAY
    return n_thr, n_stg, tenure, ptr


def seniority_per_event(activities, m, n_threads, n_stages, weights=None):
    """Seniority value after every activity event, plus the scale used."""
    n_thr, n_stg, tenure, ptr = seniority_factors(activities, m, n_threads, n_stages)
    scale = SeniorityScale(
        float(n_thr.max(initial=0)), float(n_stg.max(initial=0)), float(tenure.max(initial=0.0)))
    w = np.asarray((1.0 / 3.0,) * 3 if weights is None else weights, dtype=np.float64)
    s = (
        w[0] * (n_thr / scale.max_threads if scale.max_threads > 0 else 0.0 * n_thr)
        + w[1] * (n_stg / scale.max_stages if scale.max_stages > 0 else 0.0 * n_stg)
        + w[2] * (tenure / scale.max_tenure_days if scale.max_tenure_days > 0 else 0.0 * tenure)
    )
    return s.astype(np.float64), scale, ptr


# ---------------------------------------------------------------------------
# time discretisation
# ---------------------------------------------------------------------------


def discretize_time(events, T, patient=None, seniority=None):
    """Keep a patient's most recent ``T`` events as steps 1..T, right-padded.

    ``events`` is a sequence of :class:`ActivityEvent` (or an
    :class:`ActivityLog` for one patient) sorted by timestamp. ``seniority``
    optionally gives the per-event seniority computed on the full history.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if isinstance(events, ActivityLog):
        ts, thr, stg = events.timestamp, events.thread, events.stage
        pid = int(events.patient[0]) if len(events) else patient
    else:
        events = list(events)
        ts = np.asarray([e.timestamp for e in events], dtype=np.int64)
        thr = np.asarray([e.thread for e in events], dtype=np.int64)
        stg = np.asarray([e.stage for e in events], dtype=np.int64)
        pid = events[0].patient if events else patient
    n = len(ts)
    if n and np.any(np.diff(ts) < 0):
        raise ValueError("events must be sorted by timestamp")
    sen = np.zeros(n) if seniority is None else np.asarray(seniority, dtype=np.float64)
    if n == 0:
        log.warning("patient %s has no activity events; timeline fully masked", pid)
    keep = slice(max(n - T, 0), n)
    k = min(n, T)
    v = np.full(T, -1, dtype=np.int64)
    h = np.full(T, -1, dtype=np.int64)
    s = np.zeros(T, dtype=np.float64)
    t_out = np.full(T, -1, dtype=np.int64)
    mask = np.zeros(T, dtype=bool)
    v[:k] = thr[keep]
    h[:k] = stg[keep]
    s[:k] = sen[keep]
    if k:
        s[k:] = s[k - 1]
    t_out[:k] = ts[keep]
    mask[:k] = True
    return PatientTimeline(patient=-1 if pid is None else int(pid), v=v, h=h, seniority=s, mask=mask, timestamp=t_out)


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------


def _unique_edges(seekers, helpers):
    if len(seekers) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.stack([seekers, helpers], axis=1), axis=0)


def interaction_steps(patients, timestamps, activities, ptr, T):
    """0-based timeline step of each (patient, timestamp).

    The step is the patient's latest kept event at or before the timestamp;
    interactions older than the kept window map to step 0.
    """
    n_events = np.diff(ptr)
    keys = activities.timestamp + activities.patient * kernels._OFFSET
    q = timestamps + patients * kernels._OFFSET
    pos_full = np.searchsorted(keys, q, side="right") - 1 - ptr[patients]
    start = np.maximum(n_events[patients] - T, 0)
    kept = np.minimum(n_events[patients], T)
    return np.clip(pos_full - start, 0, np.maximum(kept - 1, 0)).astype(np.int64)


def build_graph(interactions, activities, T, m=None, n_threads=None, n_stages=None):
    """Assemble the support graph from cleaned, sorted logs."""
    m = int(activities.patient.max()) + 1 if m is None else m
    ptr = _group_ptr(activities.patient, m)
    pairs = {
        "seeker": interactions.seeker.copy(),
        "helper": interactions.helper.copy(),
        "thread": interactions.thread.copy(),
        "timestamp": interactions.timestamp.copy(),
        "seeker_step": interaction_steps(interactions.seeker, interactions.timestamp, activities, ptr, T),
        "helper_step": interaction_steps(interactions.helper, interactions.timestamp, activities, ptr, T),
    }
    is_seeker = np.zeros(m, dtype=bool)
    is_helper = np.zeros(m, dtype=bool)
    is_seeker[interactions.seeker] = True
    is_helper[interactions.helper] = True
    if n_threads is None:
        n_threads = int(max(activities.thread.max(initial=-1), interactions.thread.max(initial=-1))) + 1
    if n_stages is None:
        n_stages = int(activities.stage.max(initial=-1)) + 1
    return DynamicSupportGraph(
        m=m, T=T, n_threads=n_threads, n_stages=n_stages,
        pairs=pairs, is_seeker=is_seeker, is_helper=is_helper)


def adjacency_from_edges(seekers, helpers, m):
    """Block adjacency ``[[0, R], [R^T, 0]]`` with binary ``R``."""
    seekers = np.asarray(seekers, dtype=np.int64)
    helpers = np.asarray(helpers, dtype=np.int64)
    R = sp.coo_matrix((np.ones(len(seekers)), (seekers, helpers)), shape=(m, m)).tocsr()
    R.sum_duplicates()
    R.data[:] = 1.0
    A = sp.bmat([[None, R], [R.T, None]], format="csr")
    if A.shape != (2 * m, 2 * m):  # bmat with empty R can shrink blocks
        A = sp.csr_matrix((2 * m, 2 * m))
    A.sort_indices()
    degree = np.asarray(A.sum(axis=1)).ravel()
    return BipartiteAdjacency(A=A, R=R, degree=degree)


def build_adjacency(graph, at_step):
    """Adjacency of snapshot ``E_{at_step}`` (``1 <= at_step <= T``)."""
    edges = graph.edges(at_step)
    return adjacency_from_edges(edges[:, 0], edges[:, 1], graph.m)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def clean_logs(interactions, activities):
    """Drop exact duplicates, sort chronologically, validate ids."""
    if len(activities) == 0 or len(interactions) == 0:
        raise DatasetError("empty dataset: need at least one interaction and one activity event")
    ia = _drop_exact_duplicates(
        np.stack([interactions.seeker, interactions.helper, interactions.thread, interactions.timestamp], 1),
        "interaction")
    aa = _drop_exact_duplicates(
        np.stack([activities.patient, activities.timestamp, activities.thread, activities.stage], 1),
        "activity")
    inter = sort_interactions(InteractionLog(*(ia[:, i].copy() for i in range(4))))
    acts = sort_activities(ActivityLog(*(aa[:, i].copy() for i in range(4))))
    known = np.zeros(int(acts.patient.max()) + 1, dtype=bool)
    known[acts.patient] = True
    for col in (inter.seeker, inter.helper):
        unknown = col[(col >= len(known)) | ~known[np.minimum(col, len(known) - 1)]]
        if len(unknown):
            raise DatasetError(
                f"interactions reference unknown patient id {int(unknown[0])} (no activity events)")
    missing = np.flatnonzero(~known)
    if len(missing):
        log.warning("%d patient ids in 0..%d have no activity (first: %d)", len(missing), len(known) - 1, missing[0])
    _warn_stage_regressions(acts)
    return inter, acts


def _warn_stage_regressions(acts):
    same = acts.patient[1:] == acts.patient[:-1]
    back = same & (acts.stage[1:] < acts.stage[:-1])
    if back.any():
        log.warning("%d activity rows move to an earlier stage (kept); first patient %d",
                    int(back.sum()), int(acts.patient[1:][back][0]))


def build_timelines(acts, m, T, n_threads, n_stages, weights=None):
    sen, scale, ptr = seniority_per_event(acts, m, n_threads, n_stages, weights)
    timelines = []
    for p in range(m):
        lo, hi = ptr[p], ptr[p + 1]
        sub = ActivityLog(acts.patient[lo:hi], acts.timestamp[lo:hi], acts.thread[lo:hi], acts.stage[lo:hi])
        timelines.append(discretize_time(sub, T, patient=p, seniority=sen[lo:hi]))
    return timelines, scale


def ingest_logs(interactions, activities, config=None):
    config = DataConfig() if config is None else config
    inter, acts = clean_logs(interactions, activities)
    m = int(acts.patient.max()) + 1
    n_threads = int(max(acts.thread.max(), inter.thread.max())) + 1
    n_stages = int(acts.stage.max()) + 1
    graph = build_graph(inter, acts, config.T, m=m, n_threads=n_threads, n_stages=n_stages)
    timelines, _ = build_timelines(acts, m, config.T, n_threads, n_stages, config.seniority_weights)
    return graph, timelines


def ingest_dataset(interactions_path, activities_path, config=None):
    """Read both CSVs and return ``(graph, timelines)``."""
    config = DataConfig() if config is None else config
    inter = read_interactions(interactions_path, config.epoch)
    acts = read_activities(activities_path, config.epoch)
    return ingest_logs(inter, acts, config)


def load_dataset(directory, config=None, split=(0.8, 0.1, 0.1), split_by="seeker"):
    """Ingest a bundle directory into a model-ready :class:`Dataset`."""
    directory = Path(directory)
    meta = read_meta(directory)
    if config is None:
        config = DataConfig(T=int(meta.get("T", DataConfig.T)))
    inter = read_interactions(directory / INTERACTIONS_FILE, config.epoch)
    acts = read_activities(directory / ACTIVITIES_FILE, config.epoch)
    inter, acts = clean_logs(inter, acts)
    graph, timelines = ingest_logs(inter, acts, config)
    ds = make_dataset(graph, timelines, split, split_by)
    ds.interactions = inter
    ds.activities = acts
    ds.fingerprint = bundle_fingerprint(directory)
    return ds


def make_dataset(graph, timelines, split=(0.8, 0.1, 0.1), split_by="seeker"):
    stack = lambda key: np.stack([getattr(tl, key) for tl in timelines])  # noqa: E731
    return Dataset(
        graph=graph,
        timelines=timelines,
        threads=stack("v"),
        stages=stack("h"),
        seniority=stack("seniority"),
        mask=stack("mask"),
        split=chronological_split(
            graph.n_pairs, split, groups=graph.pairs["seeker"] if split_by == "seeker" else None),
    )


def chronological_split(n, fractions=(0.8, 0.1, 0.1), groups=None):
    """Split ``n`` time-ordered rows into train/valid/test.

    Without ``groups`` the split is three contiguous blocks. With ``groups``
    (one seeker id per row) each seeker's own rows are split in time order,
    so every query seeker has earlier training history.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    idx = np.arange(n)
    if groups is None:
        cut1 = int(round(fractions[0] * n))
        cut2 = int(round((fractions[0] + fractions[1]) * n))
        return {"train": idx[:cut1], "valid": idx[cut1:cut2], "test": idx[cut2:]}
    groups = np.asarray(groups)
    order = np.lexsort((idx, groups))
    g = groups[order]
    starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
    sizes = np.diff(np.r_[starts, n])
    rank = np.arange(n) - np.repeat(starts, sizes)
    size = np.repeat(sizes, sizes)
    cut1 = np.maximum(np.round(fractions[0] * size), 1)
    cut2 = np.round((fractions[0] + fractions[1]) * size)
    label = np.where(rank < cut1, 0, np.where(rank < cut2, 1, 2))
    out = np.empty(n, dtype=np.int64)
    out[order] = label
    return {"train": idx[out == 0], "valid": idx[out == 1], "test": idx[out == 2]}


def serialize_dataset(directory, graph, timelines, activities):
    """Write a bundle from which :func:`ingest_dataset` rebuilds ``graph``."""
    p = graph.pairs
    inter = InteractionLog(p["seeker"], p["helper"], p["thread"], p["timestamp"])
    return save_bundle(directory, inter, activities, graph.T)


def bundle_fingerprint(directory):
    h = hashlib.sha256()
    for name in (INTERACTIONS_FILE, ACTIVITIES_FILE):
        with open(os.path.join(directory, name), "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()[:16]
