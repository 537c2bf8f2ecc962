import io
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from reppath.events import (
    CallCategory, InvariantError, TraceEvent, TraceFormatError, category_of, decode_event,
    encode_event, read_trace, write_trace,
)
from helpers import ev


def test_full_event_round_trip():
    e = TraceEvent("n1:7", "send", "t3", "p2", "n1", 1234, "ctx0",
                   CallCategory.NETWORK, {"size": 9, "fd": 4}, 9, "abcd", "wordcount", 55)
    line = encode_event(e)
    rec = json.loads(line)
    for key in ("event_id", "call", "category", "args", "ret", "thread", "process", "node",
                "ts", "msg_id", "ctx", "request_type", "duration"):
        assert key in rec
    assert decode_event(line) == e


def test_fork_line_omits_msg_id():
    e = ev("n1:1", "fork", return_value=812)
    assert "msg_id" not in json.loads(encode_event(e))


def test_network_call_needs_msg_id():
    line = json.dumps({"event_id": "x", "call": "recv", "category": "network_communication",
                       "thread": "t", "process": "p", "node": "n", "ts": 0, "ctx": "c"})
    with pytest.raises(InvariantError):
        decode_event(line)


def test_truncated_line_is_malformed():
    line = encode_event(ev("n1:1"))
    with pytest.raises(TraceFormatError) as info:
        decode_event(line[:-5])
    assert info.value.field == "record"


def test_missing_field_names_it():
    rec = json.loads(encode_event(ev("n1:1")))
    del rec["node"]
    with pytest.raises(TraceFormatError) as info:
        decode_event(json.dumps(rec))
    assert info.value.field == "node"


def test_msg_id_on_local_call_rejected():
    with pytest.raises(InvariantError):
        ev("n1:1", "malloc", msg_id="zz")


def test_creation_needs_return_value():
    with pytest.raises(InvariantError):
        ev("n1:1", "pthread_create", return_value=0)


def test_categories():
    assert category_of("send") is CallCategory.NETWORK
    assert category_of("fork") is CallCategory.PROCESS
    assert category_of("pthread_create") is CallCategory.THREAD
    assert category_of("pthread_join") is CallCategory.SYNC


def test_read_trace_reports_line_number():
    buf = io.StringIO(encode_event(ev("n1:1")) + "\n\n{not json\n")
    with pytest.raises(TraceFormatError, match="line 3"):
        list(read_trace(buf))


names = st.text(st.characters(min_codepoint=33, max_codepoint=0x2FF), min_size=1, max_size=8)
calls = st.sampled_from(["send", "recv", "malloc", "open", "fork", "pthread_create",
                         "pthread_join", "queue_put", "shared_read", "waitpid", "futex"])
arg_values = st.one_of(st.integers(-2**40, 2**40), names, st.booleans(), st.none())


@st.composite
def events(draw):
    call = draw(calls)
    cat = category_of(call)
    ret = draw(st.integers(1, 2**31)) if call in ("fork", "pthread_create") else \
        draw(st.one_of(st.integers(-5, 2**31), names))
    return TraceEvent(
        event_id=draw(names), call_name=call, thread_id=draw(names), process_id=draw(names),
        node_id=draw(names), timestamp=draw(st.integers(0, 2**62)), msg_ctx_id=draw(names),
        args=draw(st.dictionaries(names, arg_values, max_size=4)), return_value=ret,
        msg_id=draw(names) if cat is CallCategory.NETWORK else None,
        request_type=draw(st.one_of(st.none(), names)),
        duration=draw(st.integers(0, 10**12)))


@settings(max_examples=500, deadline=None)
@given(events())
def test_random_events_round_trip_byte_exact(e):
    line = encode_event(e)
    back = decode_event(line)
    assert back == e
    assert encode_event(back) == line


def test_ten_thousand_generated_events_round_trip():
    rng = random.Random(2024)
    pool = ["send", "recv", "malloc", "open", "fork", "pthread_create", "queue_get", "kill"]
    for i in range(10_000):
        call = rng.choice(pool)
        net = category_of(call) is CallCategory.NETWORK
        e = TraceEvent(
            f"n{rng.randrange(9)}:{i}", call, f"t{rng.randrange(50)}", f"p{rng.randrange(9)}",
            f"n{rng.randrange(9)}", rng.randrange(2**62), rng.randbytes(8).hex(),
            args={"size": rng.randrange(1 << 20), "kéy": rng.choice(["a", "ü", 3])},
            return_value=rng.randrange(1, 2**31),
            msg_id=rng.randbytes(16).hex() if net else None,
            request_type=rng.choice([None, "wordcount", "grep"]),
            duration=rng.randrange(10**9))
        line = encode_event(e)
        assert decode_event(line) == e
        assert encode_event(decode_event(line)) == line


def test_write_read_trace():
    rng = random.Random(3)
    evs = [ev(f"n1:{i}", rng.choice(["malloc", "open"]), ts=i) for i in range(50)]
    buf = io.StringIO()
    write_trace(evs, buf)
    buf.seek(0)
    assert list(read_trace(buf)) == evs
