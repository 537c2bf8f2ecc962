"""Training pipeline: trace -> per-request trees -> per-path FSAs -> core/full."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from ..events import TraceEvent, event_order_key
from ..linking import DataExtractor, RepTree, dag_to_tree, default_extractor, link_events
from .automaton import Fsa, build_per_path_fsa
from .combine import EmptyTrainingSet, combine_fsas
from .components import ComponentList, identify_components
from .pruning import PrunedTree, prune_loops_concurrency


@dataclass
class LinkedTrace:
    tree: RepTree
    components: ComponentList
    roots: dict[str, str]           # entry event id -> request type

    def requests(self, request_type: str | None = None) -> list[str]:
        ids = [r for r, t in self.roots.items() if request_type is None or t == request_type]
        return sorted(ids, key=lambda r: event_order_key(self.tree.events[r]))

    def prune(self, root: str, fold: bool = True) -> PrunedTree:
        return prune_loops_concurrency(self.tree, root, self.components, fold)


def link_trace(events: Iterable[TraceEvent],
               extractor: DataExtractor | None = default_extractor) -> LinkedTrace:
    events = list(events)
    tree = dag_to_tree(link_events(events, extractor))
    roots = {r: tree.events[r].request_type for r in tree.roots if tree.events[r].request_type}
    return LinkedTrace(tree, identify_components(tree), roots)


@dataclass
class Model:
    request_type: str
    core: Fsa
    full: Fsa
    paths: int
    variant: str = "FSA-n"


def train_model(traces: Sequence[LinkedTrace], request_type: str, n_paths: int | None = None,
                fold: bool = True, variant: str | None = None) -> Model:
    """Core/full pair from the first ``n_paths`` requests of a type.

    Requests are taken trace by trace in entry order, so a smaller training
    set is always a prefix of a larger one.
    """
    fsas: list[Fsa] = []
    for lt in traces:
        for root in lt.requests(request_type):
            if n_paths is not None and len(fsas) >= n_paths:
                break
            fsas.append(build_per_path_fsa(lt.prune(root, fold)))
    if not fsas:
        raise EmptyTrainingSet(f"no training requests of type {request_type!r}")
    if n_paths is not None and len(fsas) < n_paths:
        raise EmptyTrainingSet(
            f"type {request_type!r}: asked for {n_paths} training paths, found {len(fsas)}")
    core, full = combine_fsas(fsas)
    return Model(request_type, core, full, len(fsas),
                 variant or f"FSA-{len(fsas)}")
