import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mintrec import data, synthgen
from mintrec.data import ActivityEvent, ActivityLog, DatasetError, InteractionLog, SeniorityScale


def _write(path, header, rows):
    path.write_text(header + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))


def _minimal(tmp_path, interactions=((0, 1, 0, 100),), activities=((0, 50, 0, 0), (1, 60, 0, 1))):
    ip, ap = tmp_path / "interactions.csv", tmp_path / "activities.csv"
    _write(ip, "seeker_id,helper_id,thread_id,timestamp", interactions)
    _write(ap, "patient_id,timestamp,thread_id,stage_id", activities)
    return ip, ap


# -------------------------------------------------------------- ingestion


def test_minimal_case(tmp_path):
    graph, timelines = data.ingest_dataset(*_minimal(tmp_path), data.DataConfig(T=10))
    assert graph.m == 2
    assert graph.n_pairs == 1
    assert len(timelines) == 2
    assert all(tl.T == 10 and tl.length == 1 for tl in timelines)


def test_unknown_patient_named(tmp_path):
    paths = _minimal(tmp_path, interactions=((0, 7, 0, 100),))
    with pytest.raises(DatasetError, match="7"):
        data.ingest_dataset(*paths)


def test_malformed_row_names_line(tmp_path):
    ip, ap = _minimal(tmp_path)
    ip.write_text("seeker_id,helper_id,thread_id,timestamp\n0,1,0,100\n0,1,zz,5\n")
    with pytest.raises(DatasetError, match=":3:"):
        data.ingest_dataset(ip, ap)


def test_empty_dataset_rejected(tmp_path):
    paths = _minimal(tmp_path, interactions=())
    with pytest.raises(DatasetError, match="empty"):
        data.ingest_dataset(*paths)


def test_bad_header_and_self_loop(tmp_path):
    ip, ap = _minimal(tmp_path)
    ip.write_text("a,b,c,d\n0,1,0,1\n")
    with pytest.raises(DatasetError, match="header"):
        data.ingest_dataset(ip, ap)
    ip.write_text("seeker_id,helper_id,thread_id,timestamp\n1,1,0,100\n")
    with pytest.raises(DatasetError, match="seeker equals helper"):
        data.ingest_dataset(ip, ap)


def test_exact_duplicates_dropped(tmp_path, caplog):
    paths = _minimal(tmp_path, interactions=((0, 1, 0, 100), (0, 1, 0, 100)))
    with caplog.at_level(logging.WARNING):
        graph, _ = data.ingest_dataset(*paths)
    assert graph.n_pairs == 1
    assert "duplicate" in caplog.text


def test_stage_regression_warns_not_rejects(tmp_path, caplog):
    acts = ((0, 50, 0, 2), (0, 70, 1, 1), (1, 60, 0, 1))
    with caplog.at_level(logging.WARNING):
        graph, _ = data.ingest_dataset(*_minimal(tmp_path, activities=acts))
    assert graph.m == 2
    assert "earlier stage" in caplog.text


@pytest.mark.slow
def test_breast_scale_counts(tmp_path):
    cfg = synthgen.GeneratorConfig(**synthgen.BREAST_SCALE, seed=0)
    synthgen.generate(cfg, tmp_path)
    graph, _ = data.ingest_dataset(tmp_path / "interactions.csv", tmp_path / "activities.csv")
    assert graph.m == 3948
    assert graph.n_pairs == 16360
    assert int(graph.is_seeker.sum()) == 719
    assert int(graph.is_helper.sum()) == 3827


def test_round_trip(tiny_bundle, tmp_path):
    graph, timelines = data.ingest_dataset(tiny_bundle / "interactions.csv", tiny_bundle / "activities.csv")
    acts = data.read_activities(tiny_bundle / "activities.csv")
    data.serialize_dataset(tmp_path, graph, timelines, acts)
    graph2, timelines2 = data.ingest_dataset(tmp_path / "interactions.csv", tmp_path / "activities.csv")
    assert graph2 == graph
    assert timelines2 == timelines


# -------------------------------------------------------- discretisation


def _events(n, patient=0):
    return [ActivityEvent(patient, 10 * i, i, 0) for i in range(n)]


def test_truncation_keeps_most_recent():
    tl = data.discretize_time(_events(12), 10)
    assert tl.v.tolist() == list(range(2, 12))
    assert tl.mask.all()


def test_padding_masks_tail():
    tl = data.discretize_time(_events(3), 10)
    assert tl.mask.tolist() == [True] * 3 + [False] * 7
    assert tl.v.tolist()[:3] == [0, 1, 2]
    assert (tl.v[3:] == -1).all()


def test_zero_events_fully_masked(caplog):
    with caplog.at_level(logging.WARNING):
        tl = data.discretize_time([], 10, patient=4)
    assert not tl.mask.any()
    assert "no activity" in caplog.text


def test_unsorted_events_rejected():
    with pytest.raises(ValueError):
        data.discretize_time(_events(3)[::-1], 10)


# ------------------------------------------------------------- seniority


def test_seniority_at_maxima_is_one():
    scale = SeniorityScale(3, 2, 10.0)
    assert data.compute_seniority([0, 1, 2], [0, 1], 10.0, scale) == pytest.approx(1.0, abs=1e-15)


def test_seniority_first_event_value():
    # oracle: write the three normalised factors out by hand and average them
    got = data.compute_seniority([5], [0], 0.0, SeniorityScale(100, 10, 1000))
    threads, stages, tenure = 1 / 100, 1 / 10, 0 / 1000
    oracle = (threads + stages + tenure) / 3
    assert got == pytest.approx(oracle, abs=1e-15)
    assert round(got, 5) == 0.03667


def test_seniority_grows_only_through_tenure_without_new_items():
    scale = SeniorityScale(10, 5, 100.0)
    a = data.compute_seniority([1, 2], [0], 4.0, scale)
    b = data.compute_seniority([1, 2, 2], [0, 0], 9.0, scale)
    assert b - a == pytest.approx((9.0 - 4.0) / 100.0 / 3)


def test_zero_maximum_contributes_zero():
    assert data.compute_seniority([0], [0], 0.0, SeniorityScale(1, 1, 0.0)) == pytest.approx(2 / 3)


def test_seniority_per_event_against_prefix_oracle(tiny_dataset):
    acts = tiny_dataset.activities
    m, nt, ns = tiny_dataset.m, tiny_dataset.graph.n_threads, tiny_dataset.graph.n_stages
    sen, scale, ptr = data.seniority_per_event(acts, m, nt, ns)
    for p in range(0, m, 7):
        lo, hi = ptr[p], ptr[p + 1]
        for j in range(lo, hi, 5):
            tenure = (acts.timestamp[j] - acts.timestamp[lo]) / 86400.0
            ref = data.compute_seniority(acts.thread[lo:j + 1], acts.stage[lo:j + 1], tenure, scale)
            assert sen[j] == pytest.approx(ref, abs=1e-12)


def test_timeline_seniority_non_decreasing(tiny_dataset):
    s, mask = tiny_dataset.seniority, tiny_dataset.mask
    diff = np.diff(s, axis=1)
    assert (diff[mask[:, 1:]] >= 0).all()
    assert ((s >= 0) & (s <= 1 + 1e-12)).all()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3), st.integers(0, 10**6)), min_size=1, max_size=30))
def test_seniority_monotone_property(events):
    events = sorted(events, key=lambda e: e[2])
    n = len(events)
    acts = ActivityLog(np.zeros(n, dtype=np.int64), np.array([e[2] for e in events]),
                       np.array([e[0] for e in events]), np.array([e[1] for e in events]))
    sen, _, _ = data.seniority_per_event(acts, 1, 6, 4)
    assert (np.diff(sen) >= -1e-15).all()
    assert sen.max() <= 1 + 1e-12


# ----------------------------------------------------------------- graph


def test_single_interaction_adjacency():
    log = InteractionLog(np.array([0]), np.array([1]), np.array([0]), np.array([100]))
    acts = ActivityLog(np.array([0, 1]), np.array([50, 60]), np.array([0, 0]), np.array([0, 0]))
    graph = data.build_graph(log, acts, T=10)
    adj = data.build_adjacency(graph, 10)
    assert adj.R.toarray().tolist() == [[0, 1], [0, 0]]
    assert adj.A.shape == (4, 4)
    assert adj.A.nnz == 2 and adj.A.sum() == 2


def test_empty_snapshot_is_zero():
    adj = data.adjacency_from_edges([], [], 3)
    assert adj.A.shape == (6, 6)
    assert adj.A.nnz == 0


def test_three_patient_degrees():
    adj = data.adjacency_from_edges([0, 0], [1, 2], 3)
    assert adj.R.toarray()[0].tolist() == [0, 1, 1]
    assert adj.degree[0] == 2
    # helper-side nodes m+1 and m+2 each see one seeker
    assert adj.degree[4] == 1 and adj.degree[5] == 1


def test_graph_invariants(tiny_dataset):
    g = tiny_dataset.graph
    prev = set()
    for t in range(1, g.T + 1):
        cur = set(map(tuple, g.edges(t).tolist()))
        assert prev <= cur
        prev = cur
    adj = data.build_adjacency(g, g.T)
    assert (adj.A != adj.A.T).nnz == 0
    R = adj.R.toarray()
    assert (R[g.pairs["seeker"], g.pairs["helper"]] == 1).all()
    assert set(np.unique(R)) <= {0.0, 1.0}
    assert prev == set(zip(g.pairs["seeker"].tolist(), g.pairs["helper"].tolist()))


def test_split_is_chronological_per_seeker(tiny_dataset):
    split = tiny_dataset.split
    n = tiny_dataset.graph.n_pairs
    assert sorted(np.concatenate(list(split.values())).tolist()) == list(range(n))
    ts = tiny_dataset.graph.pairs["timestamp"]
    seeker = tiny_dataset.graph.pairs["seeker"]
    for s in np.unique(seeker[split["test"]]):
        train_ts = ts[split["train"]][seeker[split["train"]] == s]
        test_ts = ts[split["test"]][seeker[split["test"]] == s]
        assert len(train_ts) and train_ts.max() <= test_ts.min()


def test_helper_step_uses_latest_earlier_event():
    acts = ActivityLog(np.array([0, 0, 1, 1, 1]), np.array([10, 30, 5, 20, 40]),
                       np.zeros(5, dtype=np.int64), np.zeros(5, dtype=np.int64))
    log = InteractionLog(np.array([0]), np.array([1]), np.array([0]), np.array([35]))
    graph = data.build_graph(log, acts, T=10)
    assert graph.pairs["seeker_step"].tolist() == [1]
    assert graph.pairs["helper_step"].tolist() == [1]
