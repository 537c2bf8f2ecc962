"""Trace-event vocabulary and the ``.reptrace`` record format.

A ``.reptrace`` file holds one JSON object per line.  Keys always appear in
the canonical order of :data:`FIELDS`; optional fields that are unset are
omitted rather than written as ``null``, so a file is diffable and a record
can be written by hand.  Example::

    {"event_id":"n1:7","call":"send","category":"network_communication",
     "args":{"size":1000},"ret":1000,"thread":"t3","process":"p2","node":"n1",
     "ts":120500,"msg_id":"9f...","ctx":"41...","duration":800}
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, TextIO


class CallCategory(str, enum.Enum):
    THREAD = "thread_manipulation"
    PROCESS = "process_manipulation"
    NETWORK = "network_communication"
    SYNC = "synchronization"
    OTHER = "other"


class RelationshipType(str, enum.Enum):
    TCR = "TCR"      # same-thread succession
    TOPCR = "ToPCR"  # thread/process creation
    COMR = "COMR"    # send -> recv
    SYNR = "SYNR"    # join / wait / signal
    DDR = "DDR"      # data written then read


_CALLS: dict[str, CallCategory] = {}
for _names, _cat in (
    (("pthread_create", "pthread_self", "pthread_detach", "pthread_cancel",
      "pthread_exit"), CallCategory.THREAD),
    (("fork", "vfork", "exec", "execve", "exit", "_exit"), CallCategory.PROCESS),
    (("send", "recv", "write", "read", "sendmsg", "recvmsg", "sendto",
      "recvfrom"), CallCategory.NETWORK),
    # pthread_join is listed under two headings in the call table; it only
    # matters for linking as a synchronization call.
    (("wait", "waitpid", "pthread_join", "signal", "kill", "sigwait"),
     CallCategory.SYNC),
    (("open", "close", "malloc", "syscall", "fsync", "unlink", "mmap",
      "queue_put", "queue_get", "shared_write", "shared_read"),
     CallCategory.OTHER),
):
    for _n in _names:
        _CALLS[_n] = _cat

SEND_CALLS = frozenset({"send", "write", "sendmsg", "sendto"})
RECV_CALLS = frozenset({"recv", "read", "recvmsg", "recvfrom"})
THREAD_CREATE_CALLS = frozenset({"pthread_create"})
PROCESS_CREATE_CALLS = frozenset({"fork", "vfork"})
CREATION_CALLS = THREAD_CREATE_CALLS | PROCESS_CREATE_CALLS
DATA_WRITE_CALLS = frozenset({"queue_put", "shared_write"})
DATA_READ_CALLS = frozenset({"queue_get", "shared_read"})


def category_of(call_name: str) -> CallCategory:
    """Category for a call name; names outside the known set are ``other``."""
    return _CALLS.get(call_name, CallCategory.OTHER)


def known_calls() -> dict[str, CallCategory]:
    return dict(_CALLS)


class TraceFormatError(ValueError):
    """A record could not be parsed.  ``field`` names the offending field."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class InvariantError(ValueError):
    """A parsed or constructed event breaks a TraceEvent invariant."""


@dataclass(frozen=True)
class TraceEvent:
    event_id: str
    call_name: str
    thread_id: str
    process_id: str
    node_id: str
    timestamp: int
    msg_ctx_id: str
    category: CallCategory | None = None
    args: Mapping[str, Any] = field(default_factory=dict)
    return_value: int | str = 0
    msg_id: str | None = None
    request_type: str | None = None
    duration: int = 0

    def __post_init__(self):
        if self.category is None:
            object.__setattr__(self, "category", category_of(self.call_name))
        elif not isinstance(self.category, CallCategory):
            object.__setattr__(self, "category", CallCategory(self.category))
        validate(self)

    # convenience predicates used by the linker and the detector
    @property
    def is_send(self) -> bool:
        return self.call_name in SEND_CALLS

    @property
    def is_recv(self) -> bool:
        return self.call_name in RECV_CALLS

    @property
    def out_ctx(self) -> str:
        """Context value in force for the thread right after this event."""
        if self.is_send and self.msg_id:
            return self.msg_id
        return self.msg_ctx_id

    def arg(self, key: str, default: Any = None) -> Any:
        return self.args.get(key, default)


def validate(e: TraceEvent) -> None:
    if not e.event_id:
        raise InvariantError("event_id must be non-empty")
    if not e.msg_ctx_id:
        raise InvariantError(f"{e.event_id}: msg_ctx_id must be non-empty")
    if e.category is CallCategory.NETWORK and not e.msg_id:
        raise InvariantError(f"{e.event_id}: {e.call_name} is a network call without msg_id")
    if e.category is not CallCategory.NETWORK and e.msg_id:
        raise InvariantError(f"{e.event_id}: msg_id on non-network call {e.call_name}")
    if e.call_name in CREATION_CALLS and e.return_value in (0, "", None):
        raise InvariantError(f"{e.event_id}: {e.call_name} must return the created id")
    if e.timestamp < 0 or e.duration < 0:
        raise InvariantError(f"{e.event_id}: negative time")


# (json key, attribute, required)
FIELDS: tuple[tuple[str, str, bool], ...] = (
    ("event_id", "event_id", True),
    ("call", "call_name", True),
    ("category", "category", True),
    ("args", "args", False),
    ("ret", "return_value", False),
    ("thread", "thread_id", True),
    ("process", "process_id", True),
    ("node", "node_id", True),
    ("ts", "timestamp", True),
    ("msg_id", "msg_id", False),
    ("ctx", "msg_ctx_id", True),
    ("request_type", "request_type", False),
    ("duration", "duration", False),
)
_KEYS = {k for k, _, _ in FIELDS}


def encode_event(e: TraceEvent) -> str:
    rec: dict[str, Any] = {}
    for key, attr, required in FIELDS:
        value = getattr(e, attr)
        if attr == "category":
            value = value.value
        if not required and value in (None, {}) and attr != "return_value":
            continue
        if attr == "args":
            value = {k: value[k] for k in sorted(value)}
        rec[key] = value
    return json.dumps(rec, separators=(",", ":"), ensure_ascii=False)


def decode_event(line: str) -> TraceEvent:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"unparseable record at column {exc.colno}", field="record") from exc
    if not isinstance(rec, dict):
        raise TraceFormatError("record is not an object", field="record")
    unknown = set(rec) - _KEYS
    if unknown:
        raise TraceFormatError("unknown field", field=sorted(unknown)[0])
    kwargs: dict[str, Any] = {}
    for key, attr, required in FIELDS:
        if key not in rec:
            if required:
                raise TraceFormatError("missing required field", field=key)
            continue
        kwargs[attr] = rec[key]
    for key in ("ts", "duration"):
        if key in rec and (not isinstance(rec[key], int) or isinstance(rec[key], bool)):
            raise TraceFormatError("expected integer nanoseconds", field=key)
    if "args" in rec and not isinstance(rec["args"], dict):
        raise TraceFormatError("expected an object", field="args")
    try:
        kwargs["category"] = CallCategory(rec["category"])
    except ValueError as exc:
        raise TraceFormatError(f"unknown category {rec['category']!r}", field="category") from exc
    return TraceEvent(**kwargs)


def write_trace(events: Iterable[TraceEvent], fh: TextIO) -> None:
    for e in events:
        fh.write(encode_event(e))
        fh.write("\n")


def read_trace(fh: TextIO) -> Iterator[TraceEvent]:
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            yield decode_event(line)
        except (TraceFormatError, InvariantError) as exc:
            exc.args = (f"line {lineno}: {exc.args[0]}",)
            raise


def load_trace(path) -> list[TraceEvent]:
    with open(path, encoding="utf-8") as fh:
        return list(read_trace(fh))


def save_trace(events: Iterable[TraceEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_trace(events, fh)


def event_order_key(e: TraceEvent) -> tuple:
    """Node-local ordering key: timestamp, then the node-scoped counter."""
    _, _, seq = e.event_id.rpartition(":")
    return (e.timestamp, int(seq) if seq.isdigit() else 0, e.event_id)
