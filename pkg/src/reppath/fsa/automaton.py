"""Finite state automata over event signatures.

Consolidated events become transitions and the gaps between them become
states, with ``St0`` (state 0) in front of the root event.  A folded loop
is closed by identifying the state after its body with the state before
it, so the automaton gets a cycle without gaining transitions.

Each state records the transition that first reached it in construction
order; following those back to ``St0`` gives the state's transition path,
which is what aggregation keys on.  Transitions that land on an already
reached state (loop closures) are ``back`` transitions.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from .components import Signature
from .pruning import Loop, PNode, PrunedTree

Path = tuple[Signature, ...]


class FsaFormatError(ValueError):
    pass


@dataclass
class Transition:
    src: int
    dst: int
    label: Signature
    tree: bool = True
    total_ns: float = 0.0
    samples: int = 0

    @property
    def mean_ns(self) -> float:
        return self.total_ns / self.samples if self.samples else 0.0

    def add_samples(self, durations: Iterable[float]) -> None:
        for d in durations:
            self.total_ns += d
            self.samples += 1


@dataclass
class Fsa:
    kind: str = "path"
    request_type: str | None = None
    n_states: int = 1
    transitions: list[Transition] = field(default_factory=list)
    concurrency: set[int] = field(default_factory=set)
    tree_parent: dict[int, int] = field(default_factory=dict)   # state -> transition index

    def __post_init__(self):
        self._out: dict[int, list[int]] | None = None
        self._paths: dict[int, Path] | None = None

    # -- structure ----------------------------------------------------------

    def new_state(self) -> int:
        self.n_states += 1
        self._invalidate()
        return self.n_states - 1

    def add_transition(self, t: Transition) -> int:
        self.transitions.append(t)
        if t.tree:
            if t.dst in self.tree_parent:
                raise ValueError(f"state {t.dst} already has a tree parent")
            self.tree_parent[t.dst] = len(self.transitions) - 1
        self._invalidate()
        return len(self.transitions) - 1

    def _invalidate(self) -> None:
        self._out = None
        self._paths = None

    @property
    def states(self) -> range:
        return range(self.n_states)

    def out(self, state: int) -> list[int]:
        if self._out is None:
            out: dict[int, list[int]] = defaultdict(list)
            for i, t in enumerate(self.transitions):
                out[t.src].append(i)
            self._out = out
        return self._out.get(state, [])

    def step(self, state: int, label: Signature) -> list[int]:
        return [i for i in self.out(state) if self.transitions[i].label == label]

    def paths(self) -> dict[int, Path]:
        """transition_path for every state."""
        if self._paths is None:
            paths: dict[int, Path] = {0: ()}
            # tree transitions are stored after their source's tree transition
            for i, t in enumerate(self.transitions):
                if t.tree:
                    paths[t.dst] = paths[t.src] + (t.label,)
            self._paths = paths
        return self._paths

    def transition_path(self, state: int) -> Path:
        return self.paths()[state]

    def labels(self) -> set[Signature]:
        return {t.label for t in self.transitions}

    def keyed_transitions(self) -> set[tuple[Path, Signature, Path]]:
        """Transitions identified by their endpoint paths; comparable across FSAs."""
        p = self.paths()
        return {(p[t.src], t.label, p[t.dst]) for t in self.transitions}

    def state_by_path(self) -> dict[Path, int]:
        return {path: s for s, path in self.paths().items()}

    # -- text form ----------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"fsa {self.kind} {self.request_type or '-'} states={self.n_states}"]
        for s in self.states:
            if s in self.concurrency:
                lines.append(f"concurrency {s}")
        for i, t in enumerate(self.transitions):
            lines.append(
                f"trans {i} {t.src} {t.dst} {t.label[0]} {t.label[1]} "
                f"{'tree' if t.tree else 'back'} {t.total_ns:.0f} {t.samples}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Fsa":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or not lines[0].startswith("fsa "):
            raise FsaFormatError("missing 'fsa' header line")
        try:
            _, kind, rtype, states = lines[0].split()
            f = cls(kind, None if rtype == "-" else rtype, int(states.split("=", 1)[1]))
            for n, ln in enumerate(lines[1:], start=2):
                parts = ln.split()
                if parts[0] == "concurrency":
                    f.concurrency.add(int(parts[1]))
                elif parts[0] == "trans":
                    _, idx, src, dst, call, comp, kind_, total, samples = parts
                    if int(idx) != len(f.transitions):
                        raise FsaFormatError(f"line {n}: transitions out of order")
                    f.add_transition(Transition(int(src), int(dst), (call, comp),
                                                kind_ == "tree", float(total), int(samples)))
                else:
                    raise FsaFormatError(f"line {n}: unknown record {parts[0]!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, FsaFormatError):
                raise
            raise FsaFormatError(f"malformed fsa: {exc}") from exc
        return f


class _UnionFind:
    def __init__(self):
        self.parent: list[int] = []

    def make(self) -> int:
        self.parent.append(len(self.parent))
        return len(self.parent) - 1

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union_into(self, x: int, keep: int) -> None:
        a, b = self.find(x), self.find(keep)
        if a != b:
            # the older state survives so St0 stays 0
            lo, hi = min(a, b), max(a, b)
            self.parent[hi] = lo


def build_per_path_fsa(p: PrunedTree) -> Fsa:
    uf = _UnionFind()
    start = uf.make()
    raw: list[tuple[int, int, PNode]] = []
    marks: list[int] = []

    def run(items, s: int) -> int:
        for it in items:
            if isinstance(it, Loop):
                end = run(it.body, s)
                uf.union_into(end, s)
            else:
                s2 = uf.make()
                raw.append((s, s2, it))
                if it.concurrency:
                    marks.append(s2)
                for br in it.branches:
                    run(br.items, s2)
                s = s2
        return s

    run(p.items, start)

    f = Fsa("path", p.request_type)
    number = {uf.find(start): 0}
    for src, dst, node in raw:
        a, b = uf.find(src), uf.find(dst)
        tree = b not in number
        if tree:
            number[b] = f.n_states
            f.n_states += 1
        t = Transition(number[a], number[b], node.sig, tree)
        t.add_samples(node.durations)
        f.add_transition(t)
    f.concurrency = {number[uf.find(s)] for s in marks}
    return f


def annotate_time(f: Fsa, durations: dict[int, Iterable[float]]) -> Fsa:
    """Reset per-transition time annotations from ``{transition index: durations}``."""
    for i, t in enumerate(f.transitions):
        t.total_ns, t.samples = 0.0, 0
        t.add_samples(durations.get(i, ()))
    return f
