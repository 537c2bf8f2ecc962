"""Online anomaly detection against trained core/full automata.

Events are linked as they arrive (same parent rules and arbitration as the
batch linker), grouped into one session per request, and replayed on the
request type's full automaton.  Each event's reached states act as its
token: children fire from their parent's token, a token on an ordinary
state is spent by the first child that uses it, one on a concurrency point
stays available.  Coverage of the core automaton is checked when the
session is finalized.
"""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .events import DATA_READ_CALLS, DATA_WRITE_CALLS, RelationshipType as R, TraceEvent
from .fsa.automaton import Fsa
from .fsa.components import ComponentList
from .fsa.training import Model
from .linking import (
    EventIndex,
    get_parent,
    rank_parents,
    sync_parent,
)

NO_TRANSITION = "functional_no_transition"
CORE_UNCOVERED = "functional_core_uncovered"
SLOW_TRANSITION = "performance_slow_transition"
FUNCTIONAL = (NO_TRANSITION, CORE_UNCOVERED)

DEFAULT_IDLE_MS = 5000
DEFAULT_PERF_THRESHOLD = 100.0


class UnknownRequestType(LookupError):
    pass


@dataclass
class Anomaly:
    kind: str
    request_id: str
    request_type: str | None
    event_id: str | None = None
    transition: str | None = None
    component: str | None = None
    measured_ns: float | None = None
    annotated_ns: float | None = None
    rep_events: int = 0
    detail: str = ""

    @property
    def functional(self) -> bool:
        return self.kind in FUNCTIONAL

    def format(self) -> str:
        parts = [f"kind={self.kind}", f"request={self.request_id}",
                 f"type={self.request_type or '-'}"]
        for name in ("event_id", "transition", "component"):
            val = getattr(self, name)
            if val is not None:
                parts.append(f"{name.replace('_id', '')}={val}")
        if self.measured_ns is not None:
            parts.append(f"measured_ns={self.measured_ns:.0f}")
        if self.annotated_ns is not None:
            parts.append(f"annotated_ns={self.annotated_ns:.0f}")
        parts.append(f"rep_events={self.rep_events}")
        if self.detail:
            parts.append(f"detail={self.detail}")
        return " ".join(parts)


def _label_text(label: tuple[str, str]) -> str:
    return f"{label[0]}:{label[1]}"


def classify_request(entry: TraceEvent, models: Mapping[str, Model]) -> str:
    rtype = entry.request_type
    if not rtype:
        raise UnknownRequestType(f"{entry.event_id}: entry event carries no request type")
    if rtype not in models:
        raise UnknownRequestType(f"{entry.event_id}: no trained FSAs for type {rtype!r}")
    return rtype


@dataclass
class DetectionSession:
    request_id: str
    request_type: str
    model: Model
    perf_threshold: float = DEFAULT_PERF_THRESHOLD
    parent: dict[str, str | None] = field(default_factory=dict)
    reached: dict[str, frozenset[int] | None] = field(default_factory=dict)
    spent: dict[str, set[int]] = field(default_factory=lambda: defaultdict(set))
    sticky: set[int] = field(default_factory=set)
    traversed: set[int] = field(default_factory=set)
    last_seen: int = 0
    anomalies: list[Anomaly] = field(default_factory=list)
    closed: bool = False

    def __post_init__(self):
        full = self.model.full
        paths = full.paths()
        self._full_keys = [(paths[t.src], t.label, paths[t.dst]) for t in full.transitions]
        self._core_keys = self.model.core.keyed_transitions()
        self._core_state = self.model.core.state_by_path()
        self._paths = paths

    @property
    def full(self) -> Fsa:
        return self.model.full

    @property
    def size(self) -> int:
        return len(self.parent)

    def active_full(self) -> set[int]:
        """States holding a live token, plus activated concurrency points."""
        live = set(self.sticky)
        for eid, states in self.reached.items():
            if states:
                live.update(s for s in states if s not in self.spent.get(eid, ()))
        return live

    def active_core(self) -> set[int]:
        """The full-automaton tokens that sit on states the core also has."""
        return {self._core_state[self._paths[s]] for s in self.active_full()
                if self._paths[s] in self._core_state}

    def traversed_keys(self) -> set:
        return {self._full_keys[i] for i in self.traversed}

    def ingest(self, e: TraceEvent, parent_id: str | None, label: tuple[str, str],
               now: int) -> list[Anomaly]:
        self.parent[e.event_id] = parent_id
        self.last_seen = now
        full = self.full
        if parent_id is None:
            sources = [0]
        else:
            states = self.reached.get(parent_id)
            if not states:
                # the parent already failed to match; the deviation was reported there
                self.reached[e.event_id] = None
                return []
            spent = self.spent[parent_id]
            sources = sorted(s for s in states if s in full.concurrency or s not in spent)
        fired = [i for s in sources for i in full.step(s, label)]
        if not fired:
            self.reached[e.event_id] = None
            a = Anomaly(NO_TRANSITION, self.request_id, self.request_type, e.event_id,
                        _label_text(label), label[1], rep_events=self.size,
                        detail=f"parent={parent_id or 'St0'}")
            self.anomalies.append(a)
            return [a]
        out: list[Anomaly] = []
        dst = set()
        for i in fired:
            t = full.transitions[i]
            self.traversed.add(i)
            dst.add(t.dst)
            if parent_id is not None:
                if t.src in full.concurrency:
                    self.sticky.add(t.src)
                else:
                    self.spent[parent_id].add(t.src)
        self.reached[e.event_id] = frozenset(dst)
        annotated = [full.transitions[i].mean_ns for i in fired if full.transitions[i].samples]
        if annotated:
            limit = max(annotated) * (1 + self.perf_threshold / 100.0)
            if e.duration > limit:
                a = Anomaly(SLOW_TRANSITION, self.request_id, self.request_type, e.event_id,
                            _label_text(label), label[1], float(e.duration), max(annotated),
                            rep_events=self.size)
                self.anomalies.append(a)
                out.append(a)
        return out

    def finalize(self) -> list[Anomaly]:
        if self.closed:
            return []
        self.closed = True
        missing = sorted(self._core_keys - self.traversed_keys(), key=lambda k: (len(k[0]), k))
        if not missing:
            return []
        first = missing[0]
        a = Anomaly(CORE_UNCOVERED, self.request_id, self.request_type, None,
                    _label_text(first[1]), first[1][1], rep_events=self.size,
                    detail=f"untraversed_core_transitions={len(missing)}")
        self.anomalies.append(a)
        return [a]


class Detector:
    """Routes a stream of events into per-request sessions."""

    def __init__(self, models: Mapping[str, Model], perf_threshold: float = DEFAULT_PERF_THRESHOLD,
                 idle_ms: float = DEFAULT_IDLE_MS, pending_limit: int = 100_000):
        self.models = dict(models)
        self.perf_threshold = perf_threshold
        self.idle_ns = int(idle_ms * 1_000_000)
        self.pending_limit = pending_limit
        self.index = EventIndex()
        self.components = ComponentList()
        self.sessions: dict[str, DetectionSession] = {}
        self.owner: dict[str, DetectionSession | None] = {}
        self.anomalies: list[Anomaly] = []
        self.diagnostics: list[str] = []
        self._writes: dict[str, list[str]] = defaultdict(list)
        self._reads: dict[str, int] = defaultdict(int)
        self._pending: dict[tuple, list[TraceEvent]] = defaultdict(list)
        self._pending_order: deque = deque()
        self._clock = 0

    # -- linking ------------------------------------------------------------

    def _candidates(self, e: TraceEvent) -> list[tuple[str, R]] | None:
        """Parent candidates, or None if a cross-node parent has not arrived."""
        if e.is_recv and e.msg_id:
            send = self.index.sends.get(e.msg_id)
            if send is not None:
                return [(send.event_id, R.COMR)]
            return [] if e.request_type else None
        cands: list[tuple[str, R]] = []
        found = get_parent(e, self.index)
        if found is not None:
            p, kind = found
            cands.append((p.event_id, kind))
            s = sync_parent(e, p, self.index)
            if s is not None:
                cands.append((s.event_id, R.SYNR))
        if e.call_name in DATA_READ_CALLS and e.arg("data_id") is not None:
            writes = self._writes.get(str(e.arg("data_id")))
            if not writes:
                return None
            k = self._reads[str(e.arg("data_id"))]
            cands.append((writes[min(k, len(writes) - 1)], R.DDR))
        return cands

    def _wait_key(self, e: TraceEvent) -> tuple:
        if e.is_recv and e.msg_id:
            return ("msg", e.msg_id)
        return ("data", str(e.arg("data_id")))

    def ingest(self, e: TraceEvent, now: int | None = None) -> list[Anomaly]:
        now = e.timestamp if now is None else now
        out = self.expire(now)
        self._clock = max(self._clock, now)
        try:
            self.index.add(e)
        except ValueError as exc:
            self.diagnostics.append(f"rejected {e.event_id}: {exc}")
            return out
        self.components.update(e)
        if e.call_name in DATA_WRITE_CALLS and e.arg("data_id") is not None:
            self._writes[str(e.arg("data_id"))].append(e.event_id)
        queue = [e]
        if e.is_send and e.msg_id:
            queue += self._pending.pop(("msg", e.msg_id), [])
        if e.call_name in DATA_WRITE_CALLS and e.arg("data_id") is not None:
            queue += self._pending.pop(("data", str(e.arg("data_id"))), [])
        while queue:
            ev = queue.pop(0)
            cands = self._candidates(ev)
            if cands is None:
                self._park(ev, self._wait_key(ev))
                continue
            parent_id = rank_parents(cands, self.index.events)[0][0] if cands else None
            if parent_id is not None and parent_id not in self.owner:
                # the parent itself is still waiting for its own parent
                self._park(ev, ("event", parent_id))
                continue
            out += self._place(ev, parent_id)
            queue += self._pending.pop(("event", ev.event_id), [])
        return out

    def _park(self, e: TraceEvent, key: tuple) -> None:
        self._pending[key].append(e)
        self._pending_order.append((key, e.event_id))
        while len(self._pending_order) > self.pending_limit:
            key, eid = self._pending_order.popleft()
            waiting = self._pending.get(key, [])
            for i, w in enumerate(waiting):
                if w.event_id == eid:
                    del waiting[i]
                    self.diagnostics.append(f"dropped {eid}: parent never arrived")
                    break

    def _place(self, e: TraceEvent, parent_id: str | None) -> list[Anomaly]:
        if e.call_name in DATA_READ_CALLS and e.arg("data_id") is not None:
            self._reads[str(e.arg("data_id"))] += 1
        label = self.components.signature(e)
        if parent_id is None:
            if not e.request_type:
                self.owner[e.event_id] = None
                return []
            try:
                rtype = classify_request(e, self.models)
            except UnknownRequestType as exc:
                self.diagnostics.append(str(exc))
                self.owner[e.event_id] = None
                return []
            sess = DetectionSession(e.event_id, rtype, self.models[rtype], self.perf_threshold)
            self.sessions[e.event_id] = sess
            self.owner[e.event_id] = sess
            found = sess.ingest(e, None, label, self._clock)
            self.anomalies += found
            return found
        sess = self.owner.get(parent_id)
        self.owner[e.event_id] = sess
        if sess is None:
            return []
        if sess.closed:
            self.diagnostics.append(f"late event {e.event_id} for finalized request {sess.request_id}")
            return []
        found = sess.ingest(e, parent_id, label, self._clock)
        self.anomalies += found
        return found

    # -- completion ---------------------------------------------------------

    def expire(self, now: int) -> list[Anomaly]:
        """Finalize sessions idle for at least the idle threshold."""
        out: list[Anomaly] = []
        for sess in self.sessions.values():
            if not sess.closed and now - sess.last_seen >= self.idle_ns:
                out += sess.finalize()
        self.anomalies += out
        return out

    def close(self) -> list[Anomaly]:
        """End of stream: finalize everything still open."""
        out: list[Anomaly] = []
        for sess in self.sessions.values():
            out += sess.finalize()
        for key, waiting in self._pending.items():
            for w in waiting:
                self.diagnostics.append(f"unlinked {w.event_id}: no {key[0]} parent {key[1]}")
        self._pending.clear()
        self.anomalies += out
        return out

    def by_request(self) -> dict[str, list[Anomaly]]:
        out: dict[str, list[Anomaly]] = {rid: [] for rid in self.sessions}
        for a in self.anomalies:
            out.setdefault(a.request_id, []).append(a)
        return out


def detect(events: Iterable[TraceEvent], models: Mapping[str, Model], **kw) -> Detector:
    d = Detector(models, **kw)
    for e in events:
        d.ingest(e)
    d.close()
    return d
