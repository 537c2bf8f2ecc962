"""Grouping processes into components.

A process belongs to the program it exec'd; a forked child that never
calls exec stays in its parent's component.  Component ids combine the
program with the node (``namenode@n2``) so they are stable across runs,
unlike process ids.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from ..events import PROCESS_CREATE_CALLS, TraceEvent

EXEC_CALLS = frozenset({"exec", "execve"})

Signature = tuple[str, str]


@dataclass
class ComponentList:
    programs: dict[tuple[str, str], str] = field(default_factory=dict)
    forked_from: dict[tuple[str, str], tuple[str, str]] = field(default_factory=dict)

    def update(self, e: TraceEvent) -> None:
        key = (e.node_id, e.process_id)
        if e.call_name in EXEC_CALLS:
            prog = e.arg("program") or e.arg("path")
            if prog:
                self.programs[key] = str(prog)
        elif e.call_name in PROCESS_CREATE_CALLS:
            self.forked_from.setdefault((e.node_id, str(e.return_value)), key)

    def component_of(self, node: str, process: str) -> str:
        key = (node, process)
        seen = set()
        while key not in self.programs:
            if key in seen or key not in self.forked_from:
                # never exec'd and no known parent: the process is its own component
                return f"{process}@{node}"
            seen.add(key)
            key = self.forked_from[key]
        return f"{self.programs[key]}@{node}"

    def of(self, e: TraceEvent) -> str:
        return self.component_of(e.node_id, e.process_id)

    def signature(self, e: TraceEvent) -> Signature:
        return e.call_name, self.of(e)

    def mapping(self) -> dict[tuple[str, str], str]:
        keys = set(self.programs) | set(self.forked_from)
        return {k: self.component_of(*k) for k in sorted(keys)}

    @property
    def names(self) -> list[str]:
        return sorted(set(self.mapping().values()))


def identify_components(source) -> ComponentList:
    """Build the component list from a RepTree/RepGraph or plain events."""
    events: Iterable[TraceEvent] = source.events.values() if hasattr(source, "events") else source
    comps = ComponentList()
    for e in events:
        comps.update(e)
    return comps
