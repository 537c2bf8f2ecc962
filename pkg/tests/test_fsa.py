import random

import pytest
from hypothesis import given, settings, strategies as st

from reppath.fsa.automaton import Fsa, FsaFormatError, Transition, annotate_time, build_per_path_fsa
from reppath.fsa.combine import EmptyTrainingSet, combine_fsas
from reppath.fsa.pruning import prune_loops_concurrency
from reppath.fsa.training import link_trace, train_model
from helpers import catalog_run, chain_tree, nested_tree

COMP = "p1@n1"


def _fsa(labels):
    tree, comps = chain_tree(labels)
    return build_per_path_fsa(prune_loops_concurrency(tree, "n1:1", comps))


def _accepts(f: Fsa, labels) -> bool:
    states = {0}
    for call in labels:
        states = {f.transitions[i].dst for s in states for i in f.step(s, (call, COMP))}
        if not states:
            return False
    return True


def test_three_event_chain():
    f = _fsa(["A", "B", "C"])
    assert f.n_states == 4 and len(f.transitions) == 3
    assert [t.src for t in f.transitions] == [0, 1, 2]
    assert f.transition_path(3) == (("A", COMP), ("B", COMP), ("C", COMP))


def test_loop_becomes_cycle():
    f = _fsa(["R", "A", "B", "A", "B", "A", "B", "C"])
    assert len(f.transitions) == 4           # R, A, B, C
    assert [t.tree for t in f.transitions].count(False) == 1
    for k in range(1, 6):
        assert _accepts(f, ["R"] + ["A", "B"] * k + ["C"])
    assert not _accepts(f, ["R", "A", "C"])


def test_concurrency_point_marked():
    mapper = ("map", [("open", [])])
    tree, comps, root = nested_tree(("launch", [mapper, mapper, ("log", [])]))
    p = prune_loops_concurrency(tree, root, comps)
    f = build_per_path_fsa(p)
    # launch has two distinct branch groups: its end state is the concurrency point
    (launch_t,) = [t for t in f.transitions if t.label[0] == "launch"]
    assert f.concurrency == {launch_t.dst}
    assert len(f.out(launch_t.dst)) == 2


def _marked_states(p, f):
    """States reached by the transitions of concurrency-marked nodes."""
    nodes = p.nodes()
    return {f.transitions[i].dst for i, n in enumerate(nodes) if n.concurrency}


labels = st.sampled_from(["A", "B", "C"])
trees = st.recursive(st.tuples(labels, st.just([])),
                     lambda kids: st.tuples(labels, st.lists(kids, max_size=4)),
                     max_leaves=40)


@settings(max_examples=200, deadline=None)
@given(trees, st.booleans())
def test_transition_count_matches_nodes(shape, fold):
    tree, comps, root = nested_tree(shape)
    p = prune_loops_concurrency(tree, root, comps, fold)
    f = build_per_path_fsa(p)
    assert len(f.transitions) == p.node_count
    assert 0 in f.states and f.paths()[0] == ()
    assert [t.label for t in f.transitions] == [n.sig for n in p.nodes()]
    assert f.concurrency == _marked_states(p, f)
    assert sum(t.samples for t in f.transitions) == p.original_count


def test_text_round_trip():
    run = catalog_run("jobs", wordcount=5, grep=0)
    m = train_model([link_trace(run.events)], "wordcount")
    for f in (m.core, m.full):
        g = Fsa.loads(f.dumps())
        assert g.dumps() == f.dumps()
        assert g.keyed_transitions() == f.keyed_transitions()
        assert g.concurrency == f.concurrency


@pytest.mark.parametrize("text", ["", "trans 0 0 1 a b tree 0 0", "fsa core x states=2\nbogus 1",
                                  "fsa core x states=2\ntrans 3 0 1 a b tree 0 0"])
def test_bad_fsa_text(text):
    with pytest.raises(FsaFormatError):
        Fsa.loads(text)


# -- time annotation ----------------------------------------------------------

def test_single_sample_annotation():
    t = Transition(0, 1, ("a", "b"))
    t.add_samples([10_000_000])
    assert t.mean_ns == 10_000_000


def test_mean_annotation():
    f = _fsa(["A"])
    annotate_time(f, {0: [10e6, 20e6, 30e6]})
    assert f.transitions[0].mean_ns == 20e6


def test_loop_samples_pool():
    f = _fsa(["R", "A", "A", "A"])
    (a,) = [t for t in f.transitions if t.label[0] == "A"]
    assert a.samples == 3


# -- aggregation ----------------------------------------------------------------

def test_singleton_core_equals_full():
    f = _fsa(["R", "A", "B", "A", "B", "C"])
    core, full = combine_fsas([f])
    assert core.keyed_transitions() == full.keyed_transitions() == f.keyed_transitions()
    assert len(core.transitions) == len(f.transitions)


def test_optional_retry_only_in_full():
    plain = _fsa(["R", "open", "send_rpc", "close"])
    retry = _fsa(["R", "open", "send_rpc", "retry", "close"])
    core, full = combine_fsas([plain, retry])
    assert ("retry", COMP) not in core.labels()
    assert ("retry", COMP) in full.labels()
    assert core.keyed_transitions() <= full.keyed_transitions()


def test_full_only_transition_annotated_from_its_runs():
    a, b = _fsa(["R", "X"]), _fsa(["R", "Y"])
    annotate_time(a, {0: [100], 1: [1000]})
    annotate_time(b, {0: [300], 1: [5000]})
    core, full = combine_fsas([a, b])
    by_label = {t.label[0]: t for t in full.transitions}
    assert by_label["X"].mean_ns == 1000 and by_label["Y"].mean_ns == 5000
    assert by_label["R"].mean_ns == 200


def test_empty_and_mixed_training_sets():
    with pytest.raises(EmptyTrainingSet):
        combine_fsas([])
    a = _fsa(["A"])
    b = _fsa(["A"])
    b.request_type = "other"
    with pytest.raises(ValueError):
        combine_fsas([a, b])


def _random_fsas(seed: int, n: int) -> list[Fsa]:
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        seq = ["R"]
        for _ in range(rng.randint(1, 8)):
            seq += rng.choice([["A"], ["B"], ["A", "B"], ["C", "C"], ["D"]])
        out.append(_fsa(seq))
    return out


@pytest.mark.parametrize("seed", range(60))
def test_aggregation_laws_random_sets(seed):
    fsas = _random_fsas(seed, random.Random(seed).randint(2, 9))
    prev_core = prev_full = None
    for k in range(1, len(fsas) + 1):
        core, full = combine_fsas(fsas[:k])
        ck, fk = core.keyed_transitions(), full.keyed_transitions()
        assert ck <= fk
        if k == 1:
            assert ck == fk
        else:
            assert ck <= prev_core
            assert fk >= prev_full
        prev_core, prev_full = ck, fk


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.sampled_from(["A", "B", "C"]), min_size=1, max_size=10),
                min_size=1, max_size=6))
def test_every_training_path_accepted_by_full(seqs):
    fsas = [_fsa(["R"] + s) for s in seqs]
    core, full = combine_fsas(fsas)
    for s in seqs:
        assert _accepts(full, ["R"] + s)


def test_train_model_prefix_and_errors():
    run = catalog_run("jobs", wordcount=5, grep=0)
    lt = link_trace(run.events)
    m = train_model([lt], "wordcount", 3)
    assert m.paths == 3 and m.variant == "FSA-3"
    with pytest.raises(EmptyTrainingSet):
        train_model([lt], "wordcount", 6)
    with pytest.raises(EmptyTrainingSet):
        train_model([lt], "grep")
