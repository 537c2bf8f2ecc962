"""Workload specification: YAML schema, parsing and validation.

Top-level keys::

    name: str                      # optional, defaults to the first request type
    seed: int                      # default seed (CLI may override)
    latency_us: 50                 # one-way network latency
    jitter: 0.0                    # relative duration noise, 0.2 => +-20%
    arrival_us: 100                # gap between request arrivals
    nodes: {n1: {skew_us: 0}, ...} # per-node clock skew
    requests:                      # one entry per request type
      - {type: wordcount, count: 20, entry: gateway, handler: submit}
    components:
      gateway: {node: n1, program: runjar, pool: 4,
                consume: {jobs: {threads: 2, handler: launch}}}
    handlers: {component: {handler_name: [steps]}}
    scripts:  {script_name: [steps]}
    campaign: {...}                # optional evaluation settings, see evaluation.py

Steps are mappings whose first key names the step; further keys are options::

    {call: open, us: 20}                     local call (scenario a)
    {create: mapper, as: m}   {join: m}      thread creation / join (b, e)
    {fork: child, as: c, exec: sorter}       process creation (c)
    {waitpid: c}  {wait: c}                  process wait (e)
    {kill: c, signo: 10}   {sigwait: 10}     directed signal (e)
    {fanout: mapper, count: [3, 6], join: true}
    {rpc: comp.handler, bytes: 300, reply: 64, transport: stream|datagram}
    {send: comp.handler, bytes: 300}         one-way message (d)
    {async_rpc: comp.handler, bytes: 64, reply: 512}
    {reply: 64}                              answer the rpc that started a handler
    {respond: 64}                            answer the external client
    {put: jobs, bytes: 100}                  queue hand-off (f)
    {share: region, bytes: 64}               shared-memory hand-off (g)
    {loop: [steps], count: [2, 5]}
    {maybe: [steps], p: 0.3, else: [steps]}
    {guard: out_path, ok: [steps], fail: [steps]}

``count`` is either an integer or an inclusive ``[lo, hi]`` range drawn per
execution.  ``us`` overrides the nominal duration of the emitted call.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

DEFAULT_US = {
    "open": 20, "close": 10, "malloc": 2, "syscall": 15, "fsync": 40, "unlink": 12,
    "mmap": 8, "pthread_self": 1, "pthread_create": 30, "pthread_join": 5,
    "pthread_detach": 2, "fork": 200, "exec": 300, "exit": 10, "wait": 5,
    "waitpid": 5, "kill": 3, "sigwait": 5, "send": 8, "recv": 8, "sendto": 6,
    "recvfrom": 6, "queue_put": 12, "queue_get": 12, "shared_write": 4,
    "shared_read": 4,
}

STEP_KINDS = frozenset({
    "call", "create", "join", "fork", "waitpid", "wait", "kill", "sigwait",
    "fanout", "rpc", "send", "async_rpc", "reply", "respond", "put", "share",
    "loop", "maybe", "guard",
})


class SpecError(ValueError):
    pass


@dataclass
class Step:
    kind: str
    arg: Any
    opts: dict[str, Any] = field(default_factory=dict)
    body: list["Step"] = field(default_factory=list)
    alt: list["Step"] = field(default_factory=list)

    def opt(self, key: str, default: Any = None) -> Any:
        return self.opts.get(key, default)


@dataclass
class Consumer:
    channel: str
    threads: int
    handler: str


@dataclass
class Component:
    name: str
    node: str
    program: str
    pool: int = 0
    consume: list[Consumer] = field(default_factory=list)


@dataclass
class RequestMix:
    type: str
    count: int
    entry: str
    handler: str


@dataclass
class WorkloadSpec:
    name: str
    seed: int
    latency_us: float
    jitter: float
    arrival_us: float
    nodes: dict[str, int]               # node -> skew in ns
    requests: list[RequestMix]
    components: dict[str, Component]
    handlers: dict[str, dict[str, list[Step]]]
    scripts: dict[str, list[Step]]
    campaign: dict[str, Any] = field(default_factory=dict)

    @property
    def request_types(self) -> list[str]:
        return [r.type for r in self.requests]

    def with_counts(self, **counts: int) -> "WorkloadSpec":
        """Copy with per-type request counts replaced."""
        reqs = [RequestMix(r.type, counts.get(r.type, r.count), r.entry, r.handler)
                for r in self.requests]
        return self.replace(requests=reqs)

    def replace(self, **kw) -> "WorkloadSpec":
        d = dict(self.__dict__)
        d.update(kw)
        return WorkloadSpec(**d)


def _parse_steps(raw: Any, where: str) -> list[Step]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise SpecError(f"{where}: expected a list of steps")
    out = []
    for i, item in enumerate(raw):
        loc = f"{where}[{i}]"
        if isinstance(item, str):
            item = {"call": item}
        if not isinstance(item, dict):
            raise SpecError(f"{loc}: step must be a mapping")
        # the first key names the step; later keys are options (``reply``
        # is both a step and an rpc option)
        kind = next(iter(item), None)
        if kind not in STEP_KINDS:
            raise SpecError(f"{loc}: unknown step kind {kind!r}")
        arg = item[kind]
        opts = {k: v for k, v in item.items() if k != kind}
        step = Step(kind, arg, opts)
        if kind == "loop":
            step.body = _parse_steps(arg, loc + ".loop")
            step.arg = None
        elif kind == "maybe":
            step.body = _parse_steps(arg, loc + ".maybe")
            step.alt = _parse_steps(opts.pop("else", None), loc + ".else")
            step.arg = None
        elif kind == "guard":
            step.body = _parse_steps(opts.pop("ok", None), loc + ".ok")
            step.alt = _parse_steps(opts.pop("fail", None), loc + ".fail")
        out.append(step)
    return out


def parse_spec(data: dict) -> WorkloadSpec:
    if not isinstance(data, dict):
        raise SpecError("workload spec must be a mapping")
    try:
        nodes = {str(n): int(round(float((cfg or {}).get("skew_us", 0)) * 1000))
                 for n, cfg in (data.get("nodes") or {}).items()}
        comps = {}
        for name, cfg in (data.get("components") or {}).items():
            cfg = cfg or {}
            consume = [Consumer(str(ch), int(c.get("threads", 1)), str(c["handler"]))
                       for ch, c in (cfg.get("consume") or {}).items()]
            comps[name] = Component(name, str(cfg["node"]), str(cfg.get("program", name)),
                                    int(cfg.get("pool", 0)), consume)
        reqs = [RequestMix(str(r["type"]), int(r.get("count", 1)), str(r["entry"]),
                           str(r["handler"])) for r in (data.get("requests") or [])]
        handlers = {c: {h: _parse_steps(steps, f"handlers.{c}.{h}")
                        for h, steps in (hs or {}).items()}
                    for c, hs in (data.get("handlers") or {}).items()}
        scripts = {s: _parse_steps(steps, f"scripts.{s}")
                   for s, steps in (data.get("scripts") or {}).items()}
        spec = WorkloadSpec(
            name=str(data.get("name") or (reqs[0].type if reqs else "workload")),
            seed=int(data.get("seed", 0)),
            latency_us=float(data.get("latency_us", 50)),
            jitter=float(data.get("jitter", 0.0)),
            arrival_us=float(data.get("arrival_us", 100)),
            nodes=nodes, requests=reqs, components=comps,
            handlers=handlers, scripts=scripts,
            campaign=dict(data.get("campaign") or {}),
        )
    except SpecError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SpecError(f"malformed workload spec: {exc!r}") from exc
    validate_spec(spec)
    return spec


def load_spec(path: str | Path) -> WorkloadSpec:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SpecError(f"{path}: {exc}") from exc
    return parse_spec(data)


def count_range(value: Any) -> tuple[int, int]:
    if isinstance(value, (list, tuple)):
        lo, hi = int(value[0]), int(value[-1])
    else:
        lo = hi = int(value if value is not None else 1)
    if lo < 0 or hi < lo:
        raise SpecError(f"bad count {value!r}")
    return lo, hi


def _walk(steps: list[Step]):
    for s in steps:
        yield s
        yield from _walk(s.body)
        yield from _walk(s.alt)


def _target(spec: WorkloadSpec, ref: Any, where: str) -> tuple[str, str]:
    comp, _, handler = str(ref).partition(".")
    if comp not in spec.components:
        raise SpecError(f"{where}: unknown component {comp!r}")
    if handler not in spec.handlers.get(comp, {}):
        raise SpecError(f"{where}: component {comp!r} has no handler {handler!r}")
    if spec.components[comp].pool < 1:
        raise SpecError(f"{where}: component {comp!r} has no pool threads to receive")
    return comp, handler


def validate_spec(spec: WorkloadSpec) -> None:
    if not spec.requests:
        raise SpecError("no requests declared")
    for c in spec.components.values():
        if c.node not in spec.nodes:
            raise SpecError(f"component {c.name}: unknown node {c.node!r}")
        for con in c.consume:
            if con.handler not in spec.handlers.get(c.name, {}):
                raise SpecError(f"component {c.name}: no handler {con.handler!r} for channel {con.channel!r}")
    for r in spec.requests:
        if r.entry not in spec.components:
            raise SpecError(f"request {r.type}: unknown entry component {r.entry!r}")
        if r.handler not in spec.handlers.get(r.entry, {}):
            raise SpecError(f"request {r.type}: entry handler {r.handler!r} missing")
        if spec.components[r.entry].pool < 1:
            raise SpecError(f"request {r.type}: entry component needs pool threads")
    if not 0 <= spec.jitter < 1:
        raise SpecError("jitter must be in [0, 1)")

    produced = set()
    consumed = {con.channel for c in spec.components.values() for con in c.consume}
    bodies: list[tuple[str, list[Step]]] = []
    for comp, hs in spec.handlers.items():
        if comp not in spec.components:
            raise SpecError(f"handlers for unknown component {comp!r}")
        bodies += [(f"handlers.{comp}.{h}", steps) for h, steps in hs.items()]
    bodies += [(f"scripts.{s}", steps) for s, steps in spec.scripts.items()]

    def has_reply(steps):
        return any(s.kind == "reply" for s in _walk(steps))

    for where, steps in bodies:
        _check_labels(spec, steps, where)
        for s in _walk(steps):
            if s.kind in ("create", "fork", "fanout") and s.arg not in spec.scripts:
                raise SpecError(f"{where}: unknown script {s.arg!r}")
            if s.kind in ("rpc", "send", "async_rpc"):
                comp, handler = _target(spec, s.arg, where)
                if s.kind != "send" and not has_reply(spec.handlers[comp][handler]):
                    raise SpecError(f"{where}: {s.kind} to {s.arg} but that handler never replies")
            if s.kind in ("put", "share"):
                produced.add(str(s.arg))
                if str(s.arg) not in consumed:
                    raise SpecError(f"{where}: nobody consumes channel {s.arg!r}")
            if s.kind in ("loop", "fanout"):
                count_range(s.opt("count", 1))
            if s.kind == "maybe" and not 0 <= float(s.opt("p", 0.5)) <= 1:
                raise SpecError(f"{where}: maybe.p must be a probability")
    for ch in consumed - produced:
        raise SpecError(f"channel {ch!r} is consumed but never written")


def _check_labels(spec: WorkloadSpec, steps: list[Step], where: str) -> None:
    """join/waitpid/kill must name a thread or process created earlier in the same body."""
    def visit(seq: list[Step], threads: set[str], procs: dict[str, str]):
        for s in seq:
            if s.kind == "create":
                threads.add(str(s.opt("as", s.arg)))
            elif s.kind == "fork":
                procs[str(s.opt("as", s.arg))] = s.arg
            elif s.kind == "join" and str(s.arg) not in threads:
                raise SpecError(f"{where}: join of {s.arg!r} which was not created")
            elif s.kind in ("waitpid", "wait") and str(s.arg) not in procs:
                raise SpecError(f"{where}: {s.kind} on {s.arg!r} which was not forked")
            elif s.kind == "kill":
                label = str(s.arg)
                if label not in procs:
                    raise SpecError(f"{where}: kill of {label!r} which was not forked")
                signo = s.opt("signo", 10)
                child = spec.scripts.get(procs[label], [])
                if not any(c.kind == "sigwait" and int(c.arg) == int(signo) for c in _walk(child)):
                    raise SpecError(f"{where}: {label!r} never waits for signal {signo}")
            # branches see labels created before them but do not leak their own
            if s.body or s.alt:
                visit(s.body, set(threads), dict(procs))
                visit(s.alt, set(threads), dict(procs))

    visit(steps, set(), {})


CATALOG = Path(__file__).with_name("catalog")


def catalog_names() -> list[str]:
    return sorted(p.stem for p in CATALOG.glob("*.yaml"))


def resolve_spec(name_or_path: str | Path) -> Path:
    """A spec file path, or the name of a bundled catalog workload."""
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = CATALOG / f"{name_or_path}.yaml"
    if bundled.exists():
        return bundled
    raise SpecError(f"no such workload spec {str(name_or_path)!r} "
                    f"(bundled: {', '.join(catalog_names())})")
