"""Event linking: builds the per-request DAG from a set of trace events."""
from __future__ import annotations

import bisect
import graphlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .events import (
    DATA_READ_CALLS,
    DATA_WRITE_CALLS,
    PROCESS_CREATE_CALLS,
    THREAD_CREATE_CALLS,
    RelationshipType as R,
    TraceEvent,
    event_order_key,
)

# highest first
PRIORITY = (R.COMR, R.DDR, R.SYNR, R.TOPCR, R.TCR)
RANK = {t: i for i, t in enumerate(PRIORITY)}

SYNC_WAIT_CALLS = frozenset({"pthread_join", "wait", "waitpid", "sigwait"})

DataExtractor = Callable[[TraceEvent], Optional[tuple[str, str]]]


class LinkError(ValueError):
    pass


class AmbiguousParentError(LinkError):
    pass


class CycleError(LinkError):
    pass


def default_extractor(e: TraceEvent) -> tuple[str, str] | None:
    """Data ids carried by queue/shared-memory calls (``args['data_id']``)."""
    data_id = e.arg("data_id")
    if data_id is None:
        return None
    if e.call_name in DATA_WRITE_CALLS:
        return str(data_id), "write"
    if e.call_name in DATA_READ_CALLS:
        return str(data_id), "read"
    return None


class EventIndex:
    """Lookup tables for parent resolution.

    Supports incremental insertion, so the online detector can share it.
    Per-thread lists are kept sorted by node-local order.
    """

    def __init__(self, events: Iterable[TraceEvent] = ()):
        self.events: dict[str, TraceEvent] = {}
        self.sends: dict[str, TraceEvent] = {}
        self._by_ctx: dict[tuple, list[tuple]] = defaultdict(list)
        self._by_thread: dict[tuple, list[tuple]] = defaultdict(list)
        self._by_process: dict[tuple, list[tuple]] = defaultdict(list)
        self._thread_creators: dict[tuple, list[TraceEvent]] = defaultdict(list)
        self._proc_creators: dict[tuple, list[TraceEvent]] = defaultdict(list)
        self._kills: dict[tuple, list[tuple]] = defaultdict(list)
        for e in events:
            self.add(e)

    def __contains__(self, event_id: str) -> bool:
        return event_id in self.events

    def __len__(self) -> int:
        return len(self.events)

    def add(self, e: TraceEvent) -> None:
        if e.event_id in self.events:
            raise LinkError(f"duplicate event_id {e.event_id}")
        self.events[e.event_id] = e
        k = event_order_key(e)
        if e.is_send and e.msg_id:
            self.sends[e.msg_id] = e
        bisect.insort(self._by_ctx[(e.node_id, e.thread_id, e.out_ctx)], (k, e.event_id))
        bisect.insort(self._by_thread[(e.node_id, e.thread_id)], (k, e.event_id))
        bisect.insort(self._by_process[(e.node_id, e.process_id)], (k, e.event_id))
        if e.call_name in THREAD_CREATE_CALLS:
            self._thread_creators[(e.node_id, e.msg_ctx_id, str(e.return_value))].append(e)
        elif e.call_name in PROCESS_CREATE_CALLS:
            self._proc_creators[(e.node_id, e.msg_ctx_id, str(e.return_value))].append(e)
        elif e.call_name == "kill":
            key = (e.node_id, str(e.arg("pid")), e.arg("signo"), e.process_id)
            bisect.insort(self._kills[key], (k, e.event_id))

    @staticmethod
    def _latest_before(seq: list[tuple], key: tuple) -> str | None:
        i = bisect.bisect_left(seq, (key,))
        return seq[i - 1][1] if i else None

    def same_thread_predecessor(self, e: TraceEvent) -> TraceEvent | None:
        seq = self._by_ctx.get((e.node_id, e.thread_id, e.msg_ctx_id))
        if not seq:
            return None
        eid = self._latest_before(seq, event_order_key(e))
        return self.events[eid] if eid else None

    def creator(self, e: TraceEvent) -> TraceEvent | None:
        for table, ident in ((self._thread_creators, e.thread_id),
                             (self._proc_creators, e.process_id)):
            found = table.get((e.node_id, e.msg_ctx_id, ident))
            if found:
                if len(found) > 1:
                    raise AmbiguousParentError(
                        f"{e.event_id}: {len(found)} creators match "
                        f"({', '.join(p.event_id for p in found)})")
                return found[0]
        return None

    def last_of_thread(self, node: str, thread: str, before: tuple) -> TraceEvent | None:
        eid = self._latest_before(self._by_thread.get((node, thread), []), before)
        return self.events[eid] if eid else None

    def last_of_process(self, node: str, process: str, before: tuple) -> TraceEvent | None:
        eid = self._latest_before(self._by_process.get((node, process), []), before)
        return self.events[eid] if eid else None

    def signal_source(self, waiter: TraceEvent, before: tuple) -> TraceEvent | None:
        key = (waiter.node_id, waiter.process_id, waiter.arg("signo"), str(waiter.arg("from")))
        eid = self._latest_before(self._kills.get(key, []), before)
        return self.events[eid] if eid else None

    def thread_events(self, node: str, thread: str) -> list[TraceEvent]:
        return [self.events[eid] for _, eid in self._by_thread.get((node, thread), [])]


def get_parent(e: TraceEvent, index: EventIndex) -> tuple[TraceEvent, R] | None:
    """Primary parent of ``e`` and the relationship that produced it."""
    if e.is_recv and e.msg_id:
        p = index.sends.get(e.msg_id)
        return (p, R.COMR) if p is not None else None
    p = index.same_thread_predecessor(e)
    if p is not None:
        return p, R.TCR
    # first event of its thread (or of its process)
    p = index.creator(e)
    if p is not None:
        return p, R.TOPCR
    return None


def sync_parent(e: TraceEvent, primary: TraceEvent, index: EventIndex) -> TraceEvent | None:
    """Extra synchronization parent when ``e`` directly follows a wait-type call."""
    call = primary.call_name
    if call not in SYNC_WAIT_CALLS:
        return None
    before = event_order_key(e)
    if call == "pthread_join":
        target = primary.arg("thread", primary.return_value)
        return index.last_of_thread(e.node_id, str(target), before)
    if call in ("wait", "waitpid"):
        return index.last_of_process(e.node_id, str(primary.return_value), before)
    return index.signal_source(primary, before)


@dataclass
class RepGraph:
    events: dict[str, TraceEvent] = field(default_factory=dict)
    edges: dict[tuple[str, str], R] = field(default_factory=dict)

    def add_event(self, e: TraceEvent) -> None:
        self.events[e.event_id] = e

    def add_edge(self, parent: str, child: str, kind: R) -> None:
        # one edge per pair; the first relationship found for a pair stands
        self.edges.setdefault((parent, child), kind)

    def parents(self) -> dict[str, list[tuple[str, R]]]:
        out: dict[str, list[tuple[str, R]]] = defaultdict(list)
        for (p, c), t in self.edges.items():
            out[c].append((p, t))
        return out

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for p, c in self.edges:
            out[p].append(c)
        return out

    @property
    def roots(self) -> list[str]:
        has_parent = {c for _, c in self.edges}
        return sorted(eid for eid in self.events if eid not in has_parent)

    def edge_set(self, kinds: Iterable[R] | None = None) -> set[tuple[str, str, R]]:
        ks = set(kinds) if kinds is not None else None
        return {(p, c, t) for (p, c), t in self.edges.items() if ks is None or t in ks}

    def check_acyclic(self) -> None:
        ts = graphlib.TopologicalSorter({eid: () for eid in self.events})
        for p, c in self.edges:
            ts.add(c, p)
        try:
            ts.prepare()
        except graphlib.CycleError as exc:
            raise CycleError(f"cycle through {exc.args[1]}") from exc

    def descendants(self, root: str) -> set[str]:
        kids = self.children()
        seen = {root}
        stack = [root]
        while stack:
            for c in kids.get(stack.pop(), ()):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def subgraph(self, ids: Iterable[str]) -> "RepGraph":
        keep = set(ids)
        g = RepGraph({i: self.events[i] for i in sorted(keep)})
        for (p, c), t in self.edges.items():
            if p in keep and c in keep:
                g.edges[(p, c)] = t
        return g


def link_data_dependency(events: Iterable[TraceEvent],
                         extractor: DataExtractor = default_extractor,
                         ) -> tuple[list[tuple[str, str]], list[str]]:
    """``(write, read)`` pairs correlated by data id, plus unmatched reads.

    With one write per id every read links to it; with several writes the
    k-th read (node-local order) links to the k-th write, surplus reads to
    the last write.
    """
    writes: dict[str, list[TraceEvent]] = defaultdict(list)
    reads: dict[str, list[TraceEvent]] = defaultdict(list)
    for e in events:
        hit = extractor(e)
        if hit is None:
            continue
        data_id, mode = hit
        (writes if mode == "write" else reads)[data_id].append(e)
    pairs: list[tuple[str, str]] = []
    unmatched: list[str] = []
    for data_id in sorted(reads):
        rs = sorted(reads[data_id], key=lambda e: (e.node_id, event_order_key(e)))
        ws = sorted(writes.get(data_id, []), key=lambda e: (e.node_id, event_order_key(e)))
        if not ws:
            unmatched.extend(r.event_id for r in rs)
            continue
        for k, r in enumerate(rs):
            pairs.append((ws[min(k, len(ws) - 1)].event_id, r.event_id))
    return pairs, unmatched


def link_events(events: Iterable[TraceEvent],
                extractor: DataExtractor | None = None,
                index: EventIndex | None = None) -> RepGraph:
    events = list(events)
    index = index if index is not None else EventIndex(events)
    g = RepGraph()
    for e in sorted(events, key=lambda e: e.event_id):
        g.add_event(e)
    for eid in g.events:
        e = g.events[eid]
        found = get_parent(e, index)
        if found is None:
            continue
        p, kind = found
        g.add_edge(p.event_id, eid, kind)
        s = sync_parent(e, p, index)
        if s is not None:
            g.add_edge(s.event_id, eid, R.SYNR)
    if extractor is not None:
        pairs, _ = link_data_dependency(events, extractor)
        for w, r in pairs:
            g.add_edge(w, r, R.DDR)
    g.check_acyclic()
    return g


def count_fragments(g: RepGraph) -> int:
    parent = {eid: eid for eid in g.events}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for p, c in g.edges:
        a, b = find(p), find(c)
        if a != b:
            parent[a] = b
    return len({find(x) for x in parent})


@dataclass
class RepTree:
    events: dict[str, TraceEvent]
    parent: dict[str, tuple[str, R]]
    removed: list[tuple[str, str, R]] = field(default_factory=list)

    @property
    def roots(self) -> list[str]:
        return sorted(eid for eid in self.events if eid not in self.parent)

    def children(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for c, (p, _) in self.parent.items():
            out[p].append(c)
        for kids in out.values():
            kids.sort(key=lambda c: event_order_key(self.events[c]))
        return out

    def removed_fraction(self) -> float:
        total = len(self.parent) + len(self.removed)
        return len(self.removed) / total if total else 0.0


def rank_parents(candidates: Iterable[tuple[str, R]],
                 events: dict[str, TraceEvent]) -> list[tuple[str, R]]:
    """Order parent candidates by COMR > DDR > SYNR > ToPCR > TCR.

    Ties (same relationship) go to the earlier parent timestamp, then id.
    """
    return sorted(candidates, key=lambda pt: (RANK[pt[1]], events[pt[0]].timestamp, pt[0]))


def dag_to_tree(g: RepGraph) -> RepTree:
    """Keep one parent per node: COMR > DDR > SYNR > ToPCR > TCR."""
    parent: dict[str, tuple[str, R]] = {}
    removed: list[tuple[str, str, R]] = []
    for child, ps in sorted(g.parents().items()):
        ranked = rank_parents(ps, g.events)
        parent[child] = ranked[0]
        removed.extend((p, child, t) for p, t in ranked[1:])
    return RepTree(dict(g.events), parent, removed)


def request_roots(g: RepGraph) -> list[str]:
    """Roots that are request entry events (they carry a request type)."""
    return [r for r in g.roots if g.events[r].request_type]


# --- text format -----------------------------------------------------------

def format_graph(g: RepGraph, tree: RepTree | None = None) -> str:
    lines = ["# reppath graph v1"]
    lines += [f"node {eid}" for eid in sorted(g.events)]
    lines += [f"root {r}" for r in g.roots]
    lines += [f"edge {p} {c} {t.value}" for (p, c), t in sorted(g.edges.items())]
    if tree is not None:
        lines += [f"tree {p} {c} {t.value}" for c, (p, t) in sorted(tree.parent.items())]
        lines += [f"removed {p} {c} {t.value}" for p, c, t in sorted(tree.removed)]
    return "\n".join(lines) + "\n"


def parse_graph(text: str, events: dict[str, TraceEvent]) -> tuple[RepGraph, RepTree | None]:
    g = RepGraph()
    tree_parent: dict[str, tuple[str, R]] = {}
    removed: list[tuple[str, str, R]] = []
    has_tree = False
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        kind, *rest = line.split()
        try:
            if kind == "node":
                g.add_event(events[rest[0]])
            elif kind == "root":
                pass
            elif kind == "edge":
                g.edges[(rest[0], rest[1])] = R(rest[2])
            elif kind == "tree":
                has_tree = True
                tree_parent[rest[1]] = (rest[0], R(rest[2]))
            elif kind == "removed":
                has_tree = True
                removed.append((rest[0], rest[1], R(rest[2])))
            else:
                raise LinkError(f"line {lineno}: unknown record {kind!r}")
        except (KeyError, IndexError, ValueError) as exc:
            raise LinkError(f"line {lineno}: malformed {kind!r} record") from exc
    tree = RepTree(dict(g.events), tree_parent, removed) if has_tree else None
    return g, tree
