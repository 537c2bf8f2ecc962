import pytest

from reppath.agent import frame_message
from reppath.evaluation import (
    Confusion, NoSendEvents, Variant, build_campaign, evaluate_functional, fragment_counts,
    overhead_report, settings,
)
from reppath.sim import parse_spec, run_workload
from helpers import catalog_run, catalog_spec, ev


def test_confusion_metrics():
    c = Confusion(tp=8, fp=2, fn=1, tn=5)
    assert c.precision == pytest.approx(0.8)
    assert c.recall == pytest.approx(8 / 9)
    assert c.f1 == pytest.approx(2 * 0.8 * (8 / 9) / (0.8 + 8 / 9))


def test_confusion_add():
    c = Confusion()
    for flagged, faulty in [(True, True), (True, False), (False, True), (False, False)]:
        c.add(flagged, faulty)
    assert c.to_dict()["tp"] == c.fp == c.fn == c.tn == 1


def test_recall_undefined_without_faulty_runs():
    c = Confusion(fp=1, tn=3)
    assert c.recall is None and c.f1 is None
    assert c.precision == 0.0


def test_variants():
    assert Variant.parse("FSA") == Variant("FSA", 1, False)
    assert Variant.parse("eFSA") == Variant("eFSA", 1, True)
    assert Variant.parse("FSA-10").paths == 10
    for bad in ("FSA-0", "fsa", "FSA-x"):
        with pytest.raises(ValueError):
            Variant.parse(bad)


def test_campaign_shape():
    spec = catalog_spec("jobs")
    c = build_campaign(spec, "grep")
    cfg = settings(spec)
    cats = {r.category for r in c.runs}
    assert len(c.training.requests("grep")) == cfg["train"] == 20
    assert sum(not r.faulty for r in c.runs) == 28
    assert sum(r.faulty for r in c.runs) == 48
    assert len(cats - {"clean"}) == 6


def test_campaign_deterministic():
    spec = catalog_spec("jobs")
    a = build_campaign(spec, "wordcount", clean=2, faulty_per_category=1)
    b = build_campaign(spec, "wordcount", clean=2, faulty_per_category=1)
    assert [(r.seed, r.category, r.fault) for r in a.runs] == \
        [(r.seed, r.category, r.fault) for r in b.runs]


def test_small_functional_sweep():
    spec = catalog_spec("jobs")
    c = build_campaign(spec, "wordcount", train=3, clean=3, faulty_per_category=1)
    (row,) = evaluate_functional([c], ["FSA-3"])
    conf = row.confusion
    assert conf.tp + conf.fn == 6 and conf.fp + conf.tn == 3
    assert row.by_category["clean"][1] == 3


def _sends(sizes, node="n1"):
    out = [ev(f"{node}:0", "exec", node=node, args={"program": "svc"})]
    for i, s in enumerate(sizes, 1):
        out.append(ev(f"{node}:{i}", "send", node=node, ts=i, msg_id=f"{node}m{i}",
                      args={"size": s}, return_value=s))
    return out


def test_overhead_thousand_bytes():
    rep = overhead_report(_sends([500, 1500, 1000]))
    assert rep.aggregate["mean_payload"] == 1000
    assert rep.aggregate["overhead"] == pytest.approx(0.028)
    assert "2.80%" in rep.format()


def test_overhead_28_bytes():
    assert overhead_report(_sends([28, 28])).aggregate["overhead"] == 1.0


def test_overhead_per_component():
    rep = overhead_report(_sends([100]) + _sends([10_000], node="n2"))
    assert rep.per_component["svc@n1"]["overhead"] == pytest.approx(0.28)
    assert rep.per_component["svc@n2"]["overhead"] == pytest.approx(0.0028)
    assert rep.aggregate["mean_payload"] == 5050


def test_overhead_needs_sends():
    with pytest.raises(NoSendEvents):
        overhead_report([ev("n1:1")])


def _two_node_spec(size):
    return parse_spec({
        "nodes": {"n1": {}, "n2": {}},
        "requests": [{"type": "step", "count": 30, "entry": "worker", "handler": "go"}],
        "components": {"worker": {"node": "n1", "program": "worker", "pool": 2},
                       "ps": {"node": "n2", "program": "ps", "pool": 2}},
        "handlers": {"worker": {"go": [{"loop": [{"rpc": "ps.pull", "bytes": size, "reply": size}],
                                        "count": 4}]},
                     "ps": {"pull": [{"call": "malloc"}, {"reply": size}]}},
    })


def test_tiny_messages_cost_more_than_bulk():
    tiny = overhead_report(run_workload(_two_node_spec(200)).events).aggregate["overhead"]
    bulk = overhead_report(run_workload(_two_node_spec(8192)).events).aggregate["overhead"]
    assert tiny > 0.05 and bulk < 0.01
    assert tiny > 10 * bulk


def test_overhead_counts_payload_not_frame():
    assert len(frame_message(bytes(1000), bytes(16))) - 1000 == 28


def test_queue_fragments():
    counts = fragment_counts(catalog_run("queue").events)
    (v,) = counts.values()
    assert v["without"] > 1 and v["with"] == 1
