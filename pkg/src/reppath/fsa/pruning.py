"""Loop and concurrency pruning of a request tree.

The tree is walked as a set of spines: from each node the continuation is
the child with the largest subtree, every other child hangs off the node as
a branch.  Two reductions are then applied:

* branches whose subtrees are equal up to repeat counts fold into one
  representative with a width (concurrency);
* tandem repeats of equal elements along a spine fold into a ``Loop`` with
  a repeat count, smallest period first, until nothing changes (nested
  loops come out as loops of loops).

Every consolidated node keeps the ids and durations of all events it stands
for, so nothing about repeat counts or timing is lost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from ..events import event_order_key
from ..linking import RepTree
from .components import ComponentList, Signature


@dataclass(eq=False)
class Branch:
    items: list["Item"]
    width: int = 1
    key: int = -1


@dataclass(eq=False)
class PNode:
    sig: Signature
    members: list[str]
    durations: list[int]
    branches: list[Branch] = field(default_factory=list)
    concurrency: bool = False
    key: int = -1

    @property
    def count(self) -> int:
        return len(self.members)

    @property
    def mean_duration(self) -> float:
        return sum(self.durations) / len(self.durations) if self.durations else 0.0


@dataclass(eq=False)
class Loop:
    body: list["Item"]
    repeats: list[int] = field(default_factory=list)
    key: int = -1


Item = Union[PNode, Loop]


@dataclass
class PrunedTree:
    items: list[Item]
    root: str
    original_count: int
    request_type: str | None = None

    def nodes(self) -> list[PNode]:
        """Consolidated nodes in construction (pre-)order."""
        out: list[PNode] = []
        stack: list[Item] = list(reversed(self.items))
        while stack:
            it = stack.pop()
            if isinstance(it, Loop):
                stack.extend(reversed(it.body))
            else:
                out.append(it)
                for br in reversed(it.branches):
                    stack.extend(reversed(br.items))
        return out

    @property
    def node_count(self) -> int:
        return len(self.nodes())

    def represented(self) -> int:
        return sum(n.count for n in self.nodes())

    def loops(self) -> list[Loop]:
        out = []
        stack = list(self.items)
        while stack:
            it = stack.pop()
            if isinstance(it, Loop):
                out.append(it)
                stack.extend(it.body)
            else:
                for br in it.branches:
                    stack.extend(br.items)
        return out


class _Interner:
    def __init__(self):
        self._ids: dict[tuple, int] = {}

    def __call__(self, key: tuple) -> int:
        i = self._ids.get(key)
        if i is None:
            i = self._ids[key] = len(self._ids)
        return i


def _seq_key(items: list[Item]) -> tuple:
    return tuple(it.key for it in items)


def _merge_items(dst: list[Item], src: list[Item]) -> None:
    """Fold ``src`` into ``dst``; both must carry identical keys."""
    for a, b in zip(dst, src):
        if isinstance(a, Loop):
            a.repeats.extend(b.repeats)
            _merge_items(a.body, b.body)
        else:
            a.members.extend(b.members)
            a.durations.extend(b.durations)
            a.concurrency = a.concurrency or b.concurrency
            by_key: dict[int, list[Branch]] = {}
            for br in b.branches:
                by_key.setdefault(br.key, []).append(br)
            for br in a.branches:
                other = by_key[br.key].pop(0)
                br.width = max(br.width, other.width)
                _merge_items(br.items, other.items)


class _Pruner:
    def __init__(self, tree: RepTree, comps: ComponentList, fold: bool):
        self.tree = tree
        self.comps = comps
        self.fold = fold
        self.children = tree.children()
        self.intern = _Interner()
        self.size: dict[str, int] = {}

    def sizes(self, root: str) -> None:
        order, stack = [], [root]
        while stack:
            n = stack.pop()
            order.append(n)
            stack.extend(self.children.get(n, ()))
        for n in reversed(order):
            self.size[n] = 1 + sum(self.size[c] for c in self.children.get(n, ()))

    def node_key(self, n: PNode) -> int:
        return self.intern(("n", n.sig, tuple(sorted(b.key for b in n.branches))))

    def seq(self, start: str) -> list[Item]:
        items: list[Item] = []
        cur: str | None = start
        while cur is not None:
            e = self.tree.events[cur]
            node = PNode(self.comps.signature(e), [cur], [e.duration])
            kids = self.children.get(cur, [])
            cont = self._continuation(e, kids) if kids else None
            groups: list[Branch] = []
            for k in kids:
                if k != cont:
                    self._add_branch(groups, Branch(self.seq(k)))
            tail: list[Item] = []
            if cont is not None and self.fold and any(
                    self.size[cont] == self.size[k] for k in kids if k != cont):
                # the continuation may be one more copy of a branch
                br = Branch(self.seq(cont))
                if self._add_branch(groups, br) is br:
                    groups.remove(br)
                    tail = br.items
                cont = None
                has_next = bool(tail)
            else:
                has_next = cont is not None
            node.branches = sorted(groups, key=lambda g: g.key)
            node.concurrency = len(groups) + has_next >= 2 or any(g.width > 1 for g in groups)
            node.key = self.node_key(node)
            items.append(node)
            items.extend(tail)
            cur = cont
        return self._collapse(items) if self.fold else items

    def _continuation(self, e, kids: list[str]) -> str:
        def rank(k: str):
            c = self.tree.events[k]
            same = c.thread_id == e.thread_id and c.node_id == e.node_id
            return (-self.size[k], not same, event_order_key(c))
        return min(kids, key=rank)

    def _add_branch(self, groups: list[Branch], br: Branch) -> Branch:
        br.key = self.intern(("s",) + _seq_key(br.items))
        if self.fold:
            for g in groups:
                if g.key == br.key:
                    g.width += br.width
                    _merge_items(g.items, br.items)
                    return g
        groups.append(br)
        return br

    def _collapse(self, items: list[Item]) -> list[Item]:
        changed = True
        while changed:
            changed = False
            keys = _seq_key(items)
            n = len(items)
            for period in range(1, n // 2 + 1):
                out: list[Item] = []
                i = 0
                while i < n:
                    block = keys[i:i + period]
                    if i + 2 * period <= n and keys[i + period:i + 2 * period] == block:
                        r = 2
                        while keys[i + r * period:i + (r + 1) * period] == block:
                            r += 1
                        body = items[i:i + period]
                        for k in range(1, r):
                            _merge_items(body, items[i + k * period:i + (k + 1) * period])
                        loop = Loop(body, [r])
                        loop.key = self.intern(("l",) + block)
                        out.append(loop)
                        i += r * period
                        changed = True
                    else:
                        out.append(items[i])
                        i += 1
                if changed:
                    items = out
                    break
        return items


def prune_loops_concurrency(tree: RepTree, root: str, comps: ComponentList,
                            fold: bool = True) -> PrunedTree:
    """Pruned form of the subtree under ``root``.

    ``fold=False`` keeps every event as its own node (no loop or
    concurrency folding) while still recording branching for concurrency
    marks.
    """
    p = _Pruner(tree, comps, fold)
    p.sizes(root)
    items = p.seq(root)
    return PrunedTree(items, root, p.size[root], tree.events[root].request_type)
