import dataclasses

import pytest

from reppath.detector import (
    CORE_UNCOVERED, NO_TRANSITION, SLOW_TRANSITION, Detector, UnknownRequestType,
    classify_request, detect,
)
from reppath.fsa.automaton import build_per_path_fsa
from reppath.fsa.training import Model, link_trace, train_model
from reppath.sim import FaultSpec, interleave, run_workload
from helpers import catalog_run, catalog_spec, ev


def _jobs(n=20, seed=None, **kw):
    return catalog_run("jobs", seed=seed, wordcount=n, grep=0, **kw)


@pytest.fixture(scope="module")
def wc_model():
    return train_model([link_trace(_jobs().events)], "wordcount", 20)


def test_classify():
    m = {"wordcount": object()}
    assert classify_request(ev("n1:1", request_type="wordcount"), m) == "wordcount"
    with pytest.raises(UnknownRequestType):
        classify_request(ev("n1:1"), m)
    with pytest.raises(UnknownRequestType):
        classify_request(ev("n1:1", request_type="grep"), m)


def test_training_replay_is_clean(wc_model):
    d = detect(_jobs().events, {"wordcount": wc_model})
    assert len(d.sessions) == 20
    assert d.anomalies == []


def test_interleaved_replay_is_clean(wc_model):
    events = interleave(_jobs().events, seed=8)
    d = detect(events, {"wordcount": wc_model})
    assert d.anomalies == [] and not d.diagnostics


def test_each_path_accepts_itself():
    lt = link_trace(_jobs(6).events)
    for root in lt.requests("wordcount"):
        f = build_per_path_fsa(lt.prune(root))
        m = Model("wordcount", f, f, 1)
        members = lt.tree.events
        d = Detector({"wordcount": m})
        for e in sorted(members.values(), key=lambda e: (e.timestamp, e.event_id)):
            d.ingest(e)
        d.close()
        assert [a for a in d.anomalies if a.request_id == root] == []


def test_two_types_bind_their_own_models():
    run = catalog_run("jobs", wordcount=20, grep=20)
    lt = link_trace(run.events)
    models = {t: train_model([lt], t) for t in ("wordcount", "grep")}
    d = detect(interleave(run.events, 3), models)
    assert d.anomalies == []
    kinds = {s.request_type for s in d.sessions.values()}
    assert kinds == {"wordcount", "grep"}
    for rid, s in d.sessions.items():
        assert s.request_type == lt.tree.events[rid].request_type


def test_crash_is_reported(wc_model):
    spec = catalog_spec("jobs").with_counts(wordcount=1, grep=0)
    run = run_workload(spec, [FaultSpec("component_crash", "nodemanager", after_events=2)], 77)
    d = detect(run.events, {"wordcount": wc_model})
    assert d.anomalies
    assert {a.kind for a in d.anomalies} <= {NO_TRANSITION, CORE_UNCOVERED}


def test_crash_halfway_lists_missing_core(wc_model):
    spec = catalog_spec("jobs").with_counts(wordcount=1, grep=0)
    clean = run_workload(spec, [], 31)
    cut = run_workload(spec, [FaultSpec("component_crash", "client", after_events=
                                        clean.manifest["request_events"]["client"] // 2)], 31)
    d = detect(cut.events, {"wordcount": wc_model})
    core = [a for a in d.anomalies if a.kind == CORE_UNCOVERED]
    assert core
    assert "untraversed_core_transitions=" in core[0].format()


def test_unknown_label_is_no_transition(wc_model):
    events = list(_jobs(1, seed=5).events)
    i = next(i for i, e in enumerate(events) if e.call_name == "open")
    events[i] = dataclasses.replace(events[i], call_name="mprotect")
    d = detect(events, {"wordcount": wc_model})
    kinds = [a.kind for a in d.anomalies]
    assert NO_TRANSITION in kinds
    bad = next(a for a in d.anomalies if a.kind == NO_TRANSITION)
    assert bad.event_id == events[i].event_id


def _single_call_model(duration):
    run_events = [ev("n1:1", "recv", msg_id="m1", ctx="m1", request_type="job", duration=10),
                  ev("n1:2", "open", ctx="m1", ts=5, duration=duration)]
    return train_model([link_trace(run_events)], "job")


def test_threshold_arithmetic():
    m = _single_call_model(1000)
    probe = [ev("n1:1", "recv", msg_id="m2", ctx="m2", request_type="job", duration=10),
             ev("n1:2", "open", ctx="m2", ts=5, duration=2500)]
    d = detect(probe, {"job": m}, perf_threshold=100)
    (a,) = d.anomalies
    assert a.kind == SLOW_TRANSITION and a.measured_ns == 2500 and a.annotated_ns == 1000
    probe[1] = dataclasses.replace(probe[1], duration=2000)
    assert detect(probe, {"job": m}, perf_threshold=100).anomalies == []


def test_idle_finalization_boundary():
    m = _single_call_model(1000)
    d = Detector({"job": m}, idle_ms=5000)
    d.ingest(ev("n1:1", "recv", msg_id="m3", ctx="m3", request_type="job"), now=0)
    # 4.9 s of silence: still open
    out = d.ingest(ev("n1:2", "open", ctx="m3", ts=1), now=4_900_000_000)
    assert out == [] and not d.sessions["n1:1"].closed
    # 5 s after the last event the request is finalized (complete, so no anomaly)
    assert d.expire(4_900_000_000 + 5_000_000_000) == []
    assert d.sessions["n1:1"].closed


def test_idle_finalization_flags_incomplete_request():
    m = _single_call_model(1000)
    d = Detector({"job": m}, idle_ms=5000)
    d.ingest(ev("n1:1", "recv", msg_id="m4", ctx="m4", request_type="job"), now=0)
    (a,) = d.expire(5_000_000_000)
    assert a.kind == CORE_UNCOVERED


def test_untyped_roots_are_background():
    m = _single_call_model(1000)
    d = detect([ev("n1:1", "malloc")], {"job": m})
    assert d.sessions == {} and d.anomalies == []


def test_unknown_type_is_diagnosed():
    m = _single_call_model(1000)
    d = detect([ev("n1:1", "recv", msg_id="m5", ctx="m5", request_type="zzz")], {"job": m})
    assert d.anomalies == [] and any("zzz" in msg for msg in d.diagnostics)


def test_recv_before_send_waits():
    m = _single_call_model(1000)
    send = ev("n2:1", "send", node="n2", msg_id="q1", ctx="c9")
    recv = ev("n1:5", "recv", msg_id="q1", ctx="q1", ts=3)
    d = Detector({"job": m})
    d.ingest(recv)
    assert d.owner.get("n1:5") is None and "n1:5" not in d.owner
    d.ingest(send)
    assert "n1:5" in d.owner
