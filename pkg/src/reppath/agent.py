"""Call-boundary agent: message framing, context bookkeeping, event emission.

Wire header (28 bytes, big-endian)::

    +--------+----------------+------------------+--------+
    | D5 AA  | length (u64)   | uid (16 bytes)   | AA D5  |
    +--------+----------------+------------------+--------+

``length`` is the payload length before the header was prepended.
"""
from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .events import (
    CREATION_CALLS,
    DATA_READ_CALLS,
    TraceEvent,
)

START_DELIM = b"\xd5\xaa"
END_DELIM = b"\xaa\xd5"
UID_SIZE = 16
_HEADER = struct.Struct("!2sQ16s2s")
HEADER_SIZE = _HEADER.size  # 28
MAX_PAYLOAD = (1 << 63) - 1


class FramingError(ValueError):
    """Delimiters did not match where a header was expected."""


@dataclass(frozen=True)
class WireHeader:
    length: int
    uid: bytes
    start_delim: bytes = START_DELIM
    end_delim: bytes = END_DELIM

    def pack(self) -> bytes:
        return _HEADER.pack(self.start_delim, self.length, self.uid, self.end_delim)


def frame_message(payload: bytes, uid: bytes) -> bytes:
    if len(uid) != UID_SIZE:
        raise ValueError(f"uid must be {UID_SIZE} bytes, got {len(uid)}")
    if len(payload) > MAX_PAYLOAD:
        raise ValueError("payload too large")
    return WireHeader(len(payload), bytes(uid)).pack() + bytes(payload)


def parse_header(data: bytes) -> WireHeader:
    if len(data) < HEADER_SIZE:
        raise FramingError(f"need {HEADER_SIZE} header bytes, have {len(data)}")
    start, length, uid, end = _HEADER.unpack_from(data)
    if start != START_DELIM:
        raise FramingError(f"bad start delimiter {start.hex()}")
    if end != END_DELIM:
        raise FramingError(f"bad end delimiter {end.hex()}")
    return WireHeader(length, uid, start, end)


def unframe(data: bytes) -> tuple[bytes, bytes]:
    """Split one complete frame (e.g. a datagram) into ``(uid, payload)``."""
    hdr = parse_header(data)
    payload = data[HEADER_SIZE:]
    if len(payload) != hdr.length:
        raise FramingError(f"datagram carries {len(payload)} bytes, header says {hdr.length}")
    return hdr.uid, payload


def traffic_overhead(mean_payload: float) -> float:
    """Header bytes relative to the average message size."""
    if mean_payload <= 0:
        raise ValueError("mean payload must be positive")
    return HEADER_SIZE / mean_payload


class ReassemblyBuffer:
    """Per-connection stream state.

    Bytes are appended as they arrive; complete frames are cut off the front.
    Delimiters are checked as soon as enough bytes are present, so the
    retained content is always a prefix of a well-formed frame sequence.
    """

    def __init__(self):
        self._buf = bytearray()
        self._pos = 0
        self._header: WireHeader | None = None

    def __len__(self) -> int:
        return len(self._buf) - self._pos

    @property
    def pending(self) -> bytes:
        return bytes(self._buf[self._pos:])

    def feed(self, chunk: bytes) -> list[tuple[bytes, bytes]]:
        self._buf += chunk
        out: list[tuple[bytes, bytes]] = []
        while True:
            avail = len(self._buf) - self._pos
            if self._header is None:
                if avail >= 2 and self._buf[self._pos:self._pos + 2] != START_DELIM:
                    raise FramingError(
                        f"bad start delimiter {bytes(self._buf[self._pos:self._pos + 2]).hex()}")
                if avail < HEADER_SIZE:
                    break
                self._header = parse_header(bytes(self._buf[self._pos:self._pos + HEADER_SIZE]))
                self._pos += HEADER_SIZE
                continue
            need = self._header.length
            if avail < need:
                break
            payload = bytes(self._buf[self._pos:self._pos + need])
            self._pos += need
            out.append((self._header.uid, payload))
            self._header = None
        if self._pos and self._pos * 2 >= len(self._buf):
            del self._buf[:self._pos]
            self._pos = 0
        return out


def reassemble(buffer: ReassemblyBuffer, chunk: bytes) -> list[tuple[bytes, bytes]]:
    return buffer.feed(chunk)


class CtxTable:
    """thread id -> current message-context id."""

    def __init__(self, new_id: Callable[[], str]):
        self._current: dict[str, str] = {}
        self._new_id = new_id

    def __contains__(self, thread: str) -> bool:
        return thread in self._current

    def __len__(self) -> int:
        return len(self._current)

    def get(self, thread: str) -> str:
        ctx = self._current.get(thread)
        if ctx is None:
            ctx = self._current[thread] = self._new_id()
        return ctx

    def set(self, thread: str, ctx: str) -> None:
        self._current[thread] = ctx

    def snapshot(self) -> dict[str, str]:
        return dict(self._current)


@dataclass
class Agent:
    """One agent per node.

    Time is supplied by the caller (``now`` is the node-local clock when the
    intercepted call returns), which keeps the agent independent of whatever
    transport or scheduler drives it.
    """

    node_id: str
    seed: int = 0
    emit: Callable[[TraceEvent], None] | None = None
    _rng: random.Random = field(init=False, repr=False)
    _seq: int = field(default=0, init=False)
    ctx: CtxTable = field(init=False)
    buffers: dict[Any, ReassemblyBuffer] = field(default_factory=dict, init=False)

    def __post_init__(self):
        self._rng = random.Random(f"{self.seed}/{self.node_id}")
        self.ctx = CtxTable(self.new_id)

    def new_uid(self) -> bytes:
        return self._rng.randbytes(UID_SIZE)

    def new_id(self) -> str:
        return self.new_uid().hex()

    def _event(self, **kw) -> TraceEvent:
        self._seq += 1
        e = TraceEvent(event_id=f"{self.node_id}:{self._seq}", node_id=self.node_id, **kw)
        if self.emit is not None:
            self.emit(e)
        return e

    def on_send(self, thread: str, process: str, payload: bytes, *, now: int,
                duration: int = 0, call_name: str = "send",
                args: Mapping[str, Any] | None = None,
                uid: bytes | None = None) -> tuple[bytes, TraceEvent]:
        uid = self.new_uid() if uid is None else uid
        msg_id = uid.hex()
        before = self.ctx.get(thread)
        framed = frame_message(payload, uid)
        # the send keeps the old context; what follows it runs under msg_id
        self.ctx.set(thread, msg_id)
        a = {"size": len(payload)}
        if args:
            a.update(args)
        e = self._event(call_name=call_name, thread_id=thread, process_id=process,
                        timestamp=now, duration=duration, args=a,
                        return_value=len(payload), msg_id=msg_id, msg_ctx_id=before)
        return framed, e

    def receive_chunk(self, conn: Any, chunk: bytes) -> list[tuple[bytes, bytes]]:
        buf = self.buffers.get(conn)
        if buf is None:
            buf = self.buffers[conn] = ReassemblyBuffer()
        return buf.feed(chunk)

    def on_recv(self, thread: str, process: str, uid: bytes, payload: bytes, *,
                now: int, duration: int = 0, call_name: str = "recv",
                args: Mapping[str, Any] | None = None,
                request_type: str | None = None) -> TraceEvent:
        msg_id = uid.hex()
        # new context for the receiver; its value is the received id
        self.ctx.set(thread, msg_id)
        a = {"size": len(payload)}
        if args:
            a.update(args)
        return self._event(call_name=call_name, thread_id=thread, process_id=process,
                           timestamp=now, duration=duration, args=a,
                           return_value=len(payload), msg_id=msg_id,
                           msg_ctx_id=msg_id, request_type=request_type)

    def on_other_call(self, thread: str, process: str, call_name: str, *,
                      now: int, duration: int = 0,
                      args: Mapping[str, Any] | None = None,
                      ret: int | str = 0, child_thread: str | None = None,
                      request_type: str | None = None) -> TraceEvent:
        if call_name in DATA_READ_CALLS:
            # consumer side of a queue/shared-memory handoff starts a new context
            self.ctx.set(thread, self.new_id())
        ctx = self.ctx.get(thread)
        if call_name in CREATION_CALLS:
            child = child_thread if child_thread is not None else str(ret)
            self.ctx.set(child, ctx)
        return self._event(call_name=call_name, thread_id=thread, process_id=process,
                           timestamp=now, duration=duration, args=dict(args or {}),
                           return_value=ret, msg_ctx_id=ctx, request_type=request_type)
