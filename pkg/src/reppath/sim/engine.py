"""Deterministic discrete-event simulator.

Simulated threads are generators that yield scheduling commands to the
engine.  Every intercepted call goes through the node's :class:`Agent`, so
the trace carries real framing and context ids; alongside, the engine
records the causal parents it knows from its own bookkeeping (which thread
sent which message, which thread created which) as ground truth.
"""
from __future__ import annotations

import heapq
import itertools
import json
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

from ..agent import Agent, FramingError, frame_message, unframe
from ..events import RelationshipType as R, TraceEvent
from .faults import DISK_CALLS, FaultError, FaultSpec
from .spec import DEFAULT_US, SpecError, Step, WorkloadSpec, count_range

CLOCK_BASE_NS = 1_000_000_000
REQUEST_START_NS = 5_000_000
BACKGROUND = ""


class _Killed(Exception):
    pass


class Box:
    """FIFO with blocked takers."""

    def __init__(self):
        self.items: deque = deque()
        self.waiters: deque = deque()


class Latch:
    def __init__(self):
        self.fired = False
        self.waiters: list = []


@dataclass
class Message:
    uid: bytes
    req: str
    path: str
    kind: str                       # request | reply | external
    handler: str | None
    size: int
    sender_eid: str | None
    src_comp: str | None
    dst_comp: str | None
    reply_to: tuple | None = None   # (pid, channel)
    transport: str = "stream"
    reply_size: int = 64


@dataclass
class Activity:
    req: str
    path: str
    rng: random.Random
    noise: random.Random
    msg: Message | None = None
    threads: dict = field(default_factory=dict)
    procs: dict = field(default_factory=dict)
    _children: Iterator[int] = field(default_factory=itertools.count)

    def child_path(self, tag: str) -> str:
        return f"{self.path}/{next(self._children)}{tag}"


@dataclass(eq=False)
class SimProcess:
    pid: str
    node: str
    component: str
    program: str
    inbox: Box = field(default_factory=Box)
    signals: Box = field(default_factory=Box)
    replies: dict = field(default_factory=lambda: defaultdict(Box))
    exited: Latch = field(default_factory=Latch)
    last_eid: str | None = None
    crashed: bool = False


@dataclass(eq=False)
class SimThread:
    tid: str
    proc: SimProcess
    gen: Any = None
    creator_eid: str | None = None
    act_last: str | None = None
    pending_sync: str | None = None
    last_eid: str | None = None
    done: Latch = field(default_factory=Latch)
    req: str = BACKGROUND
    dead: bool = False


@dataclass
class GroundTruth:
    parents: dict[str, list[tuple[str, R]]] = field(default_factory=dict)
    request_of: dict[str, str] = field(default_factory=dict)
    roots: dict[str, str] = field(default_factory=dict)

    def edge_set(self, kinds=None) -> set[tuple[str, str, R]]:
        ks = set(kinds) if kinds is not None else None
        return {(p, c, t) for c, ps in self.parents.items() for p, t in ps
                if ks is None or t in ks}

    def members(self, req: str) -> set[str]:
        return {e for e, r in self.request_of.items() if r == req}

    def dumps(self) -> str:
        lines = []
        for eid in self.request_of:
            rec = {"event_id": eid, "request": self.request_of[eid],
                   "parents": [[p, t.value] for p, t in self.parents.get(eid, [])]}
            lines.append(json.dumps(rec, separators=(",", ":")))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def loads(cls, text: str, manifest: dict | None = None) -> "GroundTruth":
        gt = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            gt.request_of[rec["event_id"]] = rec["request"]
            gt.parents[rec["event_id"]] = [(p, R(t)) for p, t in rec["parents"]]
        if manifest:
            gt.roots = {r["id"]: r["entry"] for r in manifest["requests"] if r.get("entry")}
        return gt


@dataclass
class RunResult:
    events: list[TraceEvent]
    truth: GroundTruth
    manifest: dict


class Simulation:
    def __init__(self, spec: WorkloadSpec, faults: list[FaultSpec] = (), seed: int | None = None):
        self.spec = spec
        self.seed = spec.seed if seed is None else seed
        self.faults = list(faults)
        self.now = 0
        self._heap: list = []
        self._seq = itertools.count()
        self._chan = itertools.count()
        self.agents = {n: Agent(n, self.seed) for n in spec.nodes}
        self.events: list[TraceEvent] = []
        self.truth = GroundTruth()
        self.messages: dict[bytes, Message] = {}
        self.procs: dict[tuple[str, str], SimProcess] = {}
        self.daemons: dict[str, SimProcess] = {}
        self.channels: dict[str, Box] = defaultdict(Box)
        self._conns: dict[tuple, dict] = {}
        self._pid_ctr = defaultdict(lambda: itertools.count(100))
        self._tid_ctr = defaultdict(lambda: itertools.count(1))
        self._req_events: dict[str, int] = defaultdict(int)
        self._active: set[int] = set()
        self.requests: dict[str, dict] = {}
        self._ext_rng = random.Random(f"{self.seed}|external")
        self._check_faults()

    # -- faults -------------------------------------------------------------

    def _known_components(self) -> set[str]:
        names = set(self.spec.components)
        for steps in itertools.chain(self.spec.scripts.values(),
                                     *(h.values() for h in self.spec.handlers.values())):
            stack = list(steps)
            while stack:
                s = stack.pop()
                if s.kind == "fork" and s.opt("exec"):
                    names.add(str(s.opt("exec")))
                stack += s.body + s.alt
        return names

    def _check_faults(self) -> None:
        comps = self._known_components()
        guards = set()
        for steps in itertools.chain(self.spec.scripts.values(),
                                     *(h.values() for h in self.spec.handlers.values())):
            stack = list(steps)
            while stack:
                s = stack.pop()
                if s.kind == "guard":
                    guards.add(str(s.arg))
                stack += s.body + s.alt
        for f in self.faults:
            if f.kind == "resource_lock":
                if f.target not in guards:
                    raise FaultError(f"unknown resource {f.target!r}")
            elif f.kind == "network_latency":
                a, b = f.link
                if a not in comps or b not in comps:
                    raise FaultError(f"unknown link {f.target!r}")
            elif f.target not in comps:
                raise FaultError(f"unknown component {f.target!r}")

    def _fault_active(self, i: int) -> bool:
        if i in self._active:
            return True
        f = self.faults[i]
        if f.kind == "resource_lock":
            return True
        comp = f.link[0] if f.kind == "network_latency" else f.target
        if self._req_events[comp] >= f.after_events:
            self._active.add(i)
            return True
        return False

    def _locked(self, resource: str) -> bool:
        return any(f.kind == "resource_lock" and f.target == resource for f in self.faults)

    def _duration(self, th: SimThread, act: Activity | None, call: str, us: float | None,
                  peer: str | None = None) -> int:
        base = float(us if us is not None else DEFAULT_US.get(call, 10)) * 1000.0
        if self.spec.jitter and act is not None:
            base *= act.noise.uniform(1 - self.spec.jitter, 1 + self.spec.jitter)
        comp = th.proc.component
        for i, f in enumerate(self.faults):
            if f.kind == "cpu_burn" and f.target == comp and self._fault_active(i):
                base *= f.factor
            elif f.kind == "disk_full" and f.target == comp and call in DISK_CALLS \
                    and self._fault_active(i):
                base *= f.factor
            elif f.kind == "network_latency" and peer is not None \
                    and {comp, peer} == set(f.link) and self._fault_active(i):
                base += f.delay_us * 1000.0
        return max(1, int(round(base)))

    # -- scheduling ---------------------------------------------------------

    def _at(self, t: int, fn: Callable, *args) -> None:
        heapq.heappush(self._heap, (t, next(self._seq), fn, args))

    def _resume(self, th: SimThread, value: Any = None) -> None:
        if th.dead or th.proc.crashed:
            th.dead = True
            return
        try:
            cmd = th.gen.send(value)
        except StopIteration:
            self._finish(th)
            return
        except _Killed:
            th.dead = True
            return
        op = cmd[0]
        if op == "sleep":
            self._at(self.now + cmd[1], self._resume, th, None)
        elif op == "take":
            box: Box = cmd[1]
            if box.items:
                self._at(self.now, self._resume, th, box.items.popleft())
            else:
                box.waiters.append(th)
        elif op == "await":
            latch: Latch = cmd[1]
            if latch.fired:
                self._at(self.now, self._resume, th, None)
            else:
                latch.waiters.append(th)
        else:  # pragma: no cover - programming error
            raise RuntimeError(f"unknown command {op!r}")

    def _put(self, box: Box, item: Any) -> None:
        while box.waiters:
            th = box.waiters.popleft()
            if not (th.dead or th.proc.crashed):
                self._at(self.now, self._resume, th, item)
                return
        box.items.append(item)

    def _fire(self, latch: Latch) -> None:
        latch.fired = True
        for th in latch.waiters:
            self._at(self.now, self._resume, th, None)
        latch.waiters.clear()

    def _finish(self, th: SimThread) -> None:
        th.dead = True
        self._fire(th.done)

    def _spawn(self, proc: SimProcess, body: Callable[[SimThread], Iterator],
               creator_eid: str | None = None) -> SimThread:
        tid = f"t{next(self._tid_ctr[proc.node])}"
        th = SimThread(tid, proc, creator_eid=creator_eid)
        th.gen = body(th)
        return th

    def _start(self, th: SimThread, delay: int = 0) -> None:
        self._at(self.now + delay, self._resume, th, None)

    def _new_process(self, node: str, component: str, program: str) -> SimProcess:
        pid = f"p{next(self._pid_ctr[node])}"
        p = SimProcess(pid, node, component, program)
        self.procs[(node, pid)] = p
        return p

    # -- emission -----------------------------------------------------------

    def _local(self, node: str) -> int:
        return self.now + self.spec.nodes[node] + CLOCK_BASE_NS

    def _gate(self, th: SimThread) -> None:
        """Crash check before a request event is emitted."""
        if th.proc.crashed or th.dead:
            raise _Killed
        if th.req == BACKGROUND:
            return
        comp = th.proc.component
        for f in self.faults:
            if f.kind == "component_crash" and f.target == comp \
                    and self._req_events[comp] >= f.after_events:
                for p in self.procs.values():
                    if p.component == comp:
                        p.crashed = True
                raise _Killed

    def _record(self, th: SimThread, e: TraceEvent, kind: str,
                comr: str | None = None, ddr: str | None = None,
                sync_source: str | None = None) -> TraceEvent:
        parents: list[tuple[str, R]] = []
        if kind == "recv":
            if comr is not None:
                parents.append((comr, R.COMR))
            th.pending_sync = None
        elif kind == "data_read":
            if ddr is not None:
                parents.append((ddr, R.DDR))
            th.pending_sync = None
        else:
            if th.act_last is not None:
                parents.append((th.act_last, R.TCR))
            elif th.creator_eid is not None and th.last_eid is None:
                parents.append((th.creator_eid, R.TOPCR))
            if th.pending_sync is not None:
                parents.append((th.pending_sync, R.SYNR))
                th.pending_sync = None
        th.act_last = e.event_id
        th.last_eid = e.event_id
        th.proc.last_eid = e.event_id
        if sync_source is not None:
            th.pending_sync = sync_source
        self.events.append(e)
        self.truth.parents[e.event_id] = parents
        self.truth.request_of[e.event_id] = th.req
        if th.req != BACKGROUND:
            self._req_events[th.proc.component] += 1
        return e

    def _agent(self, th: SimThread) -> Agent:
        return self.agents[th.proc.node]

    # -- primitive calls (generators) ----------------------------------------

    def _call(self, th, act, name, us=None, args=None, ret=0, child_thread=None,
              sync_source=None, request_type=None, writer=None):
        d = self._duration(th, act, name, us)
        yield ("sleep", d)
        self._gate(th)
        e = self._agent(th).on_other_call(
            th.tid, th.proc.pid, name, now=self._local(th.proc.node), duration=d,
            args=args, ret=ret, child_thread=child_thread, request_type=request_type)
        kind = "data_read" if name in ("queue_get", "shared_read") else "other"
        return self._record(th, e, kind, ddr=writer,
                            sync_source=sync_source)

    def _send(self, th, act, msg: Message, dst: SimProcess | None, us=None):
        call = "sendto" if msg.transport == "datagram" else "send"
        d = self._duration(th, act, call, us, peer=msg.dst_comp)
        yield ("sleep", d)
        self._gate(th)
        payload = _payload(msg.size)
        framed, e = self._agent(th).on_send(
            th.tid, th.proc.pid, payload, now=self._local(th.proc.node), duration=d,
            call_name=call, uid=msg.uid)
        msg.sender_eid = e.event_id
        self.messages[msg.uid] = msg
        self._record(th, e, "send")
        if dst is not None:
            self._transmit(th.proc, dst, framed, msg)
        return e

    def _recv(self, th, act_for_noise, box: Box, us=None):
        msg: Message = yield ("take", box)
        call = "recvfrom" if msg.transport == "datagram" else "recv"
        # the activity for noise is only known once the message is in hand
        act = act_for_noise(msg) if callable(act_for_noise) else act_for_noise
        d = self._duration(th, act, call, us, peer=msg.src_comp)
        yield ("sleep", d)
        if msg.kind != "reply":
            th.req = msg.req
        self._gate(th)
        rtype = self.requests[msg.req]["type"] if msg.kind == "external" else None
        e = self._agent(th).on_recv(
            th.tid, th.proc.pid, msg.uid, _payload(msg.size),
            now=self._local(th.proc.node), duration=d, call_name=call, request_type=rtype)
        self._record(th, e, "recv", comr=msg.sender_eid)
        if msg.kind == "external":
            self.requests[msg.req]["entry"] = e.event_id
            self.truth.roots[msg.req] = e.event_id
        return msg, e

    # -- transport ----------------------------------------------------------

    def _transmit(self, src: SimProcess, dst: SimProcess, framed: bytes, msg: Message) -> None:
        latency = int(self.spec.latency_us * 1000)
        for i, f in enumerate(self.faults):
            if f.kind == "network_latency" and {msg.src_comp, msg.dst_comp} == set(f.link) \
                    and self._fault_active(i):
                latency += int(f.delay_us * 1000)
        if msg.transport == "datagram":
            self._at(self.now + latency, self._deliver_datagram, dst, framed)
            return
        key = (src.node, src.pid, dst.node, dst.pid)
        conn = self._conns.get(key)
        if conn is None:
            conn = self._conns[key] = {"pending": bytearray(), "scheduled": False,
                                       "rng": random.Random(f"{self.seed}|conn|{key}")}
        conn["pending"] += framed
        if not conn["scheduled"]:
            conn["scheduled"] = True
            self._at(self.now + latency, self._deliver_stream, key, dst)

    def _deliver_stream(self, key, dst: SimProcess) -> None:
        conn = self._conns[key]
        data = bytes(conn["pending"])
        conn["pending"].clear()
        conn["scheduled"] = False
        if dst.crashed:
            return
        rng: random.Random = conn["rng"]
        agent = self.agents[dst.node]
        pos = 0
        while pos < len(data):
            # mostly small reads, sometimes a large one that coalesces frames
            n = rng.randint(1, 48) if rng.random() < 0.7 else rng.randint(48, 4096)
            chunk = data[pos:pos + n]
            pos += len(chunk)
            for uid, payload in agent.receive_chunk(key, chunk):
                self._route(dst, uid, payload)

    def _deliver_datagram(self, dst: SimProcess, framed: bytes) -> None:
        if dst.crashed:
            return
        try:
            uid, payload = unframe(framed)
        except FramingError:  # pragma: no cover - frames are built by the agent
            return
        self._route(dst, uid, payload)

    def _route(self, dst: SimProcess, uid: bytes, payload: bytes) -> None:
        msg = self.messages[uid]
        if len(payload) != msg.size:
            raise FramingError(f"payload size mismatch for {uid.hex()}")
        if msg.kind == "reply":
            self._put(dst.replies[msg.reply_to[1]], msg)
        else:
            self._put(dst.inbox, msg)

    # -- step interpreter ----------------------------------------------------

    def _activity(self, req: str, path: str, msg: Message | None = None) -> Activity:
        return Activity(req, path, random.Random(f"{self.seed}|{path}"),
                        random.Random(f"{self.seed}|{path}|noise"), msg)

    def _run(self, th: SimThread, steps: list[Step], act: Activity):
        for s in steps:
            yield from self._step(th, s, act)

    def _step(self, th: SimThread, s: Step, act: Activity):
        k = s.kind
        us = s.opt("us")
        if k == "call":
            yield from self._call(th, act, str(s.arg), us, args=s.opt("args"))
        elif k == "loop":
            lo, hi = count_range(s.opt("count", 1))
            for _ in range(act.rng.randint(lo, hi)):
                yield from self._run(th, s.body, act)
        elif k == "maybe":
            branch = s.body if act.rng.random() < float(s.opt("p", 0.5)) else s.alt
            yield from self._run(th, branch, act)
        elif k == "guard":
            yield from self._run(th, s.alt if self._locked(str(s.arg)) else s.body, act)
        elif k == "create":
            yield from self._create(th, act, str(s.arg), str(s.opt("as", s.arg)), us)
        elif k == "fanout":
            lo, hi = count_range(s.opt("count", 1))
            labels = []
            for i in range(act.rng.randint(lo, hi)):
                label = f"{s.arg}#{i}"
                labels.append(label)
                yield from self._create(th, act, str(s.arg), label, us)
            if s.opt("join", True):
                for label in labels:
                    yield from self._join(th, act, label)
        elif k == "join":
            yield from self._join(th, act, str(s.arg))
        elif k == "fork":
            yield from self._fork(th, act, str(s.arg), str(s.opt("as", s.arg)),
                                  s.opt("exec"), us)
        elif k in ("waitpid", "wait"):
            child: SimProcess = act.procs[str(s.arg)]
            yield ("await", child.exited)
            args = {"pid": child.pid} if k == "waitpid" else {}
            yield from self._call(th, act, k, us, args=args, ret=child.pid,
                                  sync_source=child.last_eid)
        elif k == "kill":
            child = act.procs[str(s.arg)]
            signo = int(s.opt("signo", 10))
            e = yield from self._call(th, act, "kill", us,
                                      args={"pid": child.pid, "signo": signo})
            self._put(child.signals, (signo, e.event_id, th.proc.pid))
        elif k == "sigwait":
            signo, kill_eid, sender = yield ("take", th.proc.signals)
            yield from self._call(th, act, "sigwait", us,
                                  args={"signo": signo, "from": sender}, ret=signo,
                                  sync_source=kill_eid)
        elif k in ("rpc", "send"):
            comp, handler = str(s.arg).split(".", 1)
            dst = self.daemons[comp]
            channel = None
            if k == "rpc":
                channel = f"{th.tid}/rpc/{next(self._chan)}"
            msg = self._message(th, act, comp, handler, int(s.opt("bytes", 100)),
                                "request", channel, s.opt("transport", "stream"))
            msg.reply_size = int(s.opt("reply", 64))
            yield from self._send(th, act, msg, dst)
            if k == "rpc":
                yield from self._recv(th, act, th.proc.replies[channel])
        elif k == "async_rpc":
            yield from self._async_rpc(th, act, s)
        elif k == "reply":
            req_msg = act.msg
            if req_msg is None or req_msg.reply_to is None:
                raise SpecError("reply outside an rpc handler")
            pid_key, channel = req_msg.reply_to
            dst = self.procs[pid_key]
            size = int(s.arg if s.arg is not None else getattr(req_msg, "reply_size", 64))
            msg = Message(self.agents[th.proc.node].new_uid(), act.req, act.path, "reply",
                          None, size, None, th.proc.component, dst.component,
                          reply_to=req_msg.reply_to, transport=req_msg.transport)
            yield from self._send(th, act, msg, dst, us)
        elif k == "respond":
            msg = Message(self.agents[th.proc.node].new_uid(), act.req, act.path, "response",
                          None, int(s.arg or 64), None, th.proc.component, None)
            yield from self._send(th, act, msg, None, us)
            self.requests[act.req]["completed"] = True
        elif k in ("put", "share"):
            call = "queue_put" if k == "put" else "shared_write"
            data_id = f"{act.req}:{act.child_path(str(s.arg))}"
            e = yield from self._call(th, act, call, us,
                                      args={"data_id": data_id, "channel": str(s.arg),
                                            "size": int(s.opt("bytes", 64))})
            self._put(self.channels[str(s.arg)],
                      {"data_id": data_id, "req": act.req, "writer": e.event_id,
                       "path": act.path, "mode": k})
        else:  # pragma: no cover - validated earlier
            raise SpecError(f"unsupported step {k!r}")

    def _message(self, th, act, comp, handler, size, kind, channel, transport) -> Message:
        return Message(self.agents[th.proc.node].new_uid(), act.req,
                       act.child_path(f"{comp}.{handler}"), kind, handler, size, None,
                       th.proc.component, comp,
                       reply_to=((th.proc.node, th.proc.pid), channel) if channel else None,
                       transport=str(transport))

    def _create(self, th, act, script: str, label: str, us):
        child_act = self._activity(act.req, act.child_path(f"c:{script}"), act.msg)

        def body(t: SimThread):
            t.req = act.req
            yield from self._run(t, self.spec.scripts[script], child_act)

        child = self._spawn(th.proc, body)
        e = yield from self._call(th, act, "pthread_create", us, args={"script": script},
                                  ret=child.tid, child_thread=child.tid)
        child.creator_eid = e.event_id
        act.threads[label] = child
        self._start(child)

    def _join(self, th, act, label: str):
        target: SimThread = act.threads[label]
        yield ("await", target.done)
        yield from self._call(th, act, "pthread_join", None, args={"thread": target.tid},
                              sync_source=target.last_eid)

    def _fork(self, th, act, script: str, label: str, program: str | None, us):
        comp = program if program else th.proc.component
        proc = self._new_process(th.proc.node, comp, program or th.proc.program)
        child_act = self._activity(act.req, act.child_path(f"f:{script}"), act.msg)

        def body(t: SimThread):
            t.req = act.req
            if program:
                yield from self._call(t, child_act, "exec", None, args={"program": program})
            yield from self._run(t, self.spec.scripts[script], child_act)
            yield from self._call(t, child_act, "exit", None)
            self._fire(proc.exited)

        child = self._spawn(proc, body)
        e = yield from self._call(th, act, "fork", us, args={"script": script},
                                  ret=proc.pid, child_thread=child.tid)
        child.creator_eid = e.event_id
        act.procs[label] = proc
        self._start(child)

    def _async_rpc(self, th, act, s: Step):
        comp, handler = str(s.arg).split(".", 1)
        dst = self.daemons[comp]
        channel = f"{th.tid}/async/{next(self._chan)}"
        msg = self._message(th, act, comp, handler, int(s.opt("bytes", 100)), "request",
                            channel, s.opt("transport", "stream"))
        msg.reply_size = int(s.opt("reply", 64))
        sub = self._activity(act.req, act.child_path("async"), act.msg)

        def receiver(t: SimThread):
            t.req = act.req
            yield from self._call(t, sub, "pthread_self")
            yield from self._recv(t, sub, th.proc.replies[channel])

        def sender(t: SimThread):
            t.req = act.req
            yield from self._call(t, sub, "pthread_self")
            yield from self._send(t, sub, msg, dst)

        threads = []
        for body in (receiver, sender):
            child = self._spawn(th.proc, body)
            e = yield from self._call(th, act, "pthread_create", None,
                                      args={"script": body.__name__}, ret=child.tid,
                                      child_thread=child.tid)
            child.creator_eid = e.event_id
            threads.append(child)
            self._start(child)
        for child in reversed(threads):
            yield ("await", child.done)
            yield from self._call(th, act, "pthread_join", None, args={"thread": child.tid},
                                  sync_source=child.last_eid)

    # -- daemon threads -----------------------------------------------------

    def _pool_thread(self, comp: str):
        handlers = self.spec.handlers.get(comp, {})

        def body(th: SimThread):
            yield from self._call(th, None, "pthread_self")
            while True:
                msg, _ = yield from self._recv(
                    th, lambda m: self._activity(m.req, m.path, m), th.proc.inbox)
                act = self._activity(msg.req, msg.path, msg)
                if msg.kind == "external":
                    act.msg = msg
                yield from self._run(th, handlers[msg.handler], act)
        return body

    def _consumer_thread(self, comp: str, channel: str, handler: str):
        steps = self.spec.handlers[comp][handler]

        def body(th: SimThread):
            yield from self._call(th, None, "pthread_self")
            while True:
                item = yield ("take", self.channels[channel])
                th.req = item["req"]
                act = self._activity(item["req"], f"{item['path']}>{item['data_id']}")
                call = "queue_get" if item["mode"] == "put" else "shared_read"
                yield from self._call(th, act, call, None,
                                      args={"data_id": item["data_id"], "channel": channel},
                                      writer=item["writer"])
                yield from self._run(th, steps, act)
        return body

    def _boot(self) -> None:
        for name in sorted(self.spec.components):
            c = self.spec.components[name]
            proc = self._new_process(c.node, name, c.program)
            self.daemons[name] = proc
            bodies = [self._pool_thread(name) for _ in range(c.pool)]
            for con in c.consume:
                bodies += [self._consumer_thread(name, con.channel, con.handler)
                           for _ in range(con.threads)]

            def main(th: SimThread, proc=proc, bodies=bodies, program=c.program):
                yield from self._call(th, None, "exec", None, args={"program": program})
                for b in bodies:
                    child = self._spawn(proc, b)
                    e = yield from self._call(th, None, "pthread_create", None,
                                              ret=child.tid, child_thread=child.tid)
                    child.creator_eid = e.event_id
                    self._start(child)

            self._start(self._spawn(proc, main))

    def _arrivals(self) -> None:
        order = []
        for mix in self.spec.requests:
            order += [(i, mix) for i in range(mix.count)]
        order.sort(key=lambda im: im[0])  # round-robin across types
        gap = int(self.spec.arrival_us * 1000)
        for n, (i, mix) in enumerate(order):
            rid = f"{mix.type}-{i:04d}"
            self.requests[rid] = {"id": rid, "type": mix.type, "entry": None,
                                  "completed": False, "entry_component": mix.entry}
            self._at(REQUEST_START_NS + n * gap, self._submit, rid, mix)

    def _submit(self, rid: str, mix) -> None:
        dst = self.daemons[mix.entry]
        msg = Message(self._ext_rng.randbytes(16), rid, rid, "external", mix.handler, 256,
                      None, None, mix.entry)
        self.messages[msg.uid] = msg
        key = ("client", rid, dst.node, dst.pid)
        framed = frame_message(_payload(msg.size), msg.uid)
        agent = self.agents[dst.node]
        for uid, payload in agent.receive_chunk(key, framed):
            self._route(dst, uid, payload)

    # -- main loop ----------------------------------------------------------

    def run(self) -> RunResult:
        self._boot()
        self._arrivals()
        while self._heap:
            t, _, fn, args = heapq.heappop(self._heap)
            self.now = t
            fn(*args)
        # threads still parked in boxes are idle daemons or victims of a fault
        return RunResult(self.events, self.truth, self._manifest())

    def _manifest(self) -> dict:
        comps: dict[str, dict] = {}
        for (node, pid), p in sorted(self.procs.items()):
            c = comps.setdefault(p.component, {"node": p.node, "program": p.program,
                                               "processes": []})
            c["processes"].append(pid)
        return {
            "workload": self.spec.name,
            "seed": self.seed,
            "request_types": self.spec.request_types,
            "requests": [self.requests[r] for r in sorted(self.requests)],
            "faults": [f.to_dict() for f in self.faults],
            "components": comps,
            "request_events": dict(sorted(self._req_events.items())),
            "event_count": len(self.events),
        }


def _payload(size: int) -> bytes:
    return bytes(size)


def run_workload(spec: WorkloadSpec, faults: list[FaultSpec] = (), seed: int | None = None
                 ) -> RunResult:
    return Simulation(spec, faults, seed).run()


def interleave(events: list[TraceEvent], seed: int) -> list[TraceEvent]:
    """Reorder across nodes while keeping each node's own order."""
    rng = random.Random(seed)
    per_node: dict[str, deque] = defaultdict(deque)
    for e in events:
        per_node[e.node_id].append(e)
    out = []
    nodes = sorted(per_node)
    while nodes:
        n = rng.choice(nodes)
        out.append(per_node[n].popleft())
        if not per_node[n]:
            nodes.remove(n)
    return out
