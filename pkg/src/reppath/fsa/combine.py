"""Core/full aggregation of per-path automata for one request type.

Every state is identified by its transition path.  Paths found in every
input automaton go into both results, the rest into the full one only;
merging a path walks it from ``St0`` and grafts the unmatched remainder at
the state where it branches off.  Loop closures travel as
``(source path, label, target path)`` triples and are restored wherever
both endpoints exist.  Time annotations pool the samples of every input
transition with the same key.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from typing import Sequence

from .automaton import Fsa, Path, Transition


class EmptyTrainingSet(ValueError):
    pass


def _merge_path(f: Fsa, index: dict[tuple[int, tuple], int], sp: Path) -> int:
    s = 0
    for label in sp:
        nxt = index.get((s, label))
        if nxt is None:
            # branching state found; link the rest of the path here
            nxt = f.new_state()
            f.add_transition(Transition(s, nxt, label, tree=True))
            index[(s, label)] = nxt
        s = nxt
    return s


def combine_fsas(fsas: Sequence[Fsa]) -> tuple[Fsa, Fsa]:
    if not fsas:
        raise EmptyTrainingSet("need at least one per-path FSA")
    rtypes = {f.request_type for f in fsas}
    if len(rtypes) > 1:
        raise ValueError(f"FSAs of different request types: {sorted(map(str, rtypes))}")
    rtype = rtypes.pop()
    n = len(fsas)

    path_count: Counter[Path] = Counter()
    back_count: Counter[tuple] = Counter()
    samples: dict[tuple, list[float]] = defaultdict(lambda: [0.0, 0])
    conc_paths: set[Path] = set()
    for f in fsas:
        paths = f.paths()
        path_count.update(set(paths.values()))
        backs = set()
        for t in f.transitions:
            key = (paths[t.src], t.label, paths[t.dst])
            if not t.tree:
                backs.add(key)
            acc = samples[key]
            acc[0] += t.total_ns
            acc[1] += t.samples
        back_count.update(backs)
        conc_paths.update(paths[s] for s in f.concurrency)

    core, full = Fsa("core", rtype), Fsa("full", rtype)
    core_idx: dict = {}
    full_idx: dict = {}
    for sp in sorted(path_count, key=lambda p: (len(p), p)):
        if path_count[sp] == n:
            _merge_path(core, core_idx, sp)
        _merge_path(full, full_idx, sp)

    for agg, wanted in ((core, lambda k: back_count[k] == n), (full, lambda k: True)):
        by_path = agg.state_by_path()
        for key in sorted(back_count):
            src, label, dst = key
            if wanted(key) and src in by_path and dst in by_path:
                agg.add_transition(Transition(by_path[src], by_path[dst], label, tree=False))
        paths = agg.paths()
        for t in agg.transitions:
            total, count = samples.get((paths[t.src], t.label, paths[t.dst]), (0.0, 0))
            t.total_ns, t.samples = total, count
        agg.concurrency = {s for s, p in paths.items() if p in conc_paths}
    return core, full
