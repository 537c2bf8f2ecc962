"""Shared builders and cached simulator runs for the test suite."""
from __future__ import annotations

from functools import lru_cache

from reppath.events import RelationshipType as R
from reppath.events import TraceEvent
from reppath.fsa.components import ComponentList
from reppath.linking import RepTree
from reppath.sim import load_spec, parse_spec, resolve_spec, run_workload

LINK_TYPES = (R.TCR, R.TOPCR, R.COMR, R.SYNR)


def ev(eid, call="malloc", *, thread="t1", process="p1", node="n1", ts=0, ctx="c0",
       **kw) -> TraceEvent:
    return TraceEvent(event_id=eid, call_name=call, thread_id=thread, process_id=process,
                      node_id=node, timestamp=ts, msg_ctx_id=ctx, **kw)


@lru_cache(maxsize=None)
def catalog_spec(name: str):
    return load_spec(resolve_spec(name))


@lru_cache(maxsize=None)
def catalog_run(name: str, seed: int | None = None, **counts):
    spec = catalog_spec(name)
    if counts:
        spec = spec.with_counts(**counts)
    return run_workload(spec, seed=seed)


def tiny_spec(steps, count=1, **extra):
    """One component, one request type whose handler runs ``steps``."""
    data = {"name": "tiny", "seed": 1, "nodes": {"n1": {"skew_us": 0}},
            "requests": [{"type": "job", "count": count, "entry": "svc", "handler": "go"}],
            "components": {"svc": {"node": "n1", "program": "svc", "pool": 1}},
            "handlers": {"svc": {"go": steps}}}
    data.update(extra)
    return parse_spec(data)


def chain_tree(labels, *, request_type="job"):
    """Single-thread chain of calls; the first carries the request type."""
    events, parent = {}, {}
    prev = None
    for i, call in enumerate(labels):
        e = ev(f"n1:{i + 1}", call, ts=i * 10, duration=5,
               request_type=request_type if i == 0 else None)
        events[e.event_id] = e
        if prev is not None:
            parent[e.event_id] = (prev, R.TCR)
        prev = e.event_id
    return RepTree(events, parent), ComponentList()


def nested_tree(shape, *, request_type="job"):
    """Tree from ``(call, [children...])`` tuples, children in time order.

    Every child gets its own thread so sibling order is by timestamp only.
    """
    events, parent = {}, {}
    counter = [0]

    def add(node, par, depth, thread):
        call, kids = node
        counter[0] += 1
        eid = f"n1:{counter[0]}"
        events[eid] = ev(eid, call, thread=thread, ts=counter[0] * 10, duration=5,
                         request_type=request_type if par is None else None)
        if par is not None:
            parent[eid] = (par, R.TCR)
        for i, k in enumerate(kids):
            add(k, eid, depth + 1, thread if i == 0 else f"{thread}.{i}")
        return eid

    root = add(shape, None, 0, "t1")
    return RepTree(events, parent), ComponentList(), root
