"""Wire protocol: framing, canonical bodies, codecs, fuzz robustness.

The three frame goldens pin the encoding for good: a stage built from
this tree must interoperate with a control plane built from any other
checkout, so the bytes can never change shape.
"""

import random
import socket
import struct
import threading

import pytest

from ioplane.protocol import (
    MAX_BODY,
    FrameReader,
    Message,
    ProtocolError,
    decode_body,
    decode_rule,
    decode_stage_info,
    decode_stats,
    dial,
    encode_body,
    encode_frame,
    encode_rule,
    encode_stage_info,
    encode_stats,
    listen,
    make_ack,
    make_err,
    send_message,
)
from ioplane.routing import ClassifierMask, ClassifierValues
from ioplane.rules import (
    BindChannel,
    BindObject,
    CreateChannel,
    CreateObject,
    DifferentiationRule,
    EnforcementRule,
    HousekeepingRule,
    RemoveChannel,
    RemoveObject,
    SetDefaultChannel,
    SetMask,
)
from ioplane.types import StageInfo, StatsRow

US = b"\x1f"


def test_ack_frame_golden_bytes():
    assert encode_frame(make_ack(1)) == bytes.fromhex("0500000061636b1f31")


def test_err_body_golden():
    body = encode_body(make_err(7, "bad_rule", "nope"))
    assert body == b"err" + US + b"7" + US + b"code=bad_rule" + US + b"msg=nope"
    assert len(body) == 28


def test_stage_info_req_body_golden():
    body = encode_body(Message("stage_info_req", 3))
    assert body == b"stage_info_req" + US + b"3"
    assert len(body) == 16


def test_err_without_msg_omits_field():
    msg = decode_body(encode_body(make_err(2, "timeout")))
    assert msg.get("code") == "timeout"
    assert msg.get("msg") is None
    with pytest.raises(ProtocolError):
        msg.require("msg")


def test_msg_id_bounds():
    encode_body(Message("ack", 0xFFFFFFFFFFFFFFFF))
    with pytest.raises(ProtocolError):
        encode_body(Message("ack", 0xFFFFFFFFFFFFFFFF + 1))
    with pytest.raises(ProtocolError):
        encode_body(Message("ack", -1))
    with pytest.raises(ProtocolError):
        decode_body(b"ack" + US + b"-1")


def test_unknown_kind_rejected_both_ways():
    with pytest.raises(ProtocolError):
        encode_body(Message("gossip", 1))
    with pytest.raises(ProtocolError):
        decode_body(b"gossip" + US + b"1")


def test_fields_must_follow_canonical_order():
    ok = b"err" + US + b"1" + US + b"code=x" + US + b"msg=y"
    decode_body(ok)
    swapped = b"err" + US + b"1" + US + b"msg=y" + US + b"code=x"
    with pytest.raises(ProtocolError, match="canonical order"):
        decode_body(swapped)


def test_non_repeatable_field_rejected():
    dup = b"err" + US + b"1" + US + b"code=x" + US + b"code=y"
    with pytest.raises(ProtocolError, match="repeated"):
        decode_body(dup)


def test_row_field_repeats():
    body = b"collect_resp" + US + b"4" + US + b"row=1:2:3:4:5:6:7.0" + US + b"row=1:2:4:4:5:6:7.0"
    msg = decode_body(body)
    assert len(msg.get_all("row")) == 2


def test_undeclared_field_rejected():
    with pytest.raises(ProtocolError):
        decode_body(b"ack" + US + b"1" + US + b"extra=1")


def test_separator_inside_value_rejected_on_encode():
    with pytest.raises(ProtocolError):
        encode_body(Message("err", 1, (("code", "a\x1fb"),)))


def test_malformed_field_text():
    with pytest.raises(ProtocolError):
        decode_body(b"err" + US + b"1" + US + b"codeonly")
    with pytest.raises(ProtocolError):
        decode_body(b"err" + US + b"1" + US + b"=value")
    with pytest.raises(ProtocolError):
        decode_body(b"err")
    with pytest.raises(ProtocolError):
        decode_body(b"err" + US + b"abc")
    with pytest.raises(ProtocolError):
        decode_body(b"\xff\xfe" + US + b"1")


def test_body_size_limit():
    big = "x" * (MAX_BODY + 1)
    with pytest.raises(ProtocolError):
        encode_body(Message("err", 1, (("code", big),)))
    reader = FrameReader()
    with pytest.raises(ProtocolError):
        reader.feed(struct.pack("<I", MAX_BODY + 1))


def test_frame_reader_reassembles_byte_by_byte():
    frames = b"".join(encode_frame(make_ack(i)) for i in range(5))
    reader = FrameReader()
    got = []
    for i in range(len(frames)):
        got.extend(reader.feed(frames[i : i + 1]))
    assert [m.msg_id for m in got] == [0, 1, 2, 3, 4]
    assert reader.pending_bytes == 0


def test_frame_reader_batches_in_one_feed():
    frames = encode_frame(make_ack(1)) + encode_frame(make_err(2, "x"))
    reader = FrameReader()
    got = reader.feed(frames)
    assert [m.kind for m in got] == ["ack", "err"]


RULE_CORPUS = [
    HousekeepingRule(1, CreateChannel(4)),
    HousekeepingRule(2, CreateObject(4, 9, "noop")),
    HousekeepingRule(3, CreateObject(4, 10, "drl", {"rate": 10_485_760, "refill_period_us": 100_000})),
    HousekeepingRule(4, RemoveObject(4, 9)),
    HousekeepingRule(5, RemoveChannel(4)),
    DifferentiationRule(6, SetMask(ClassifierMask.from_bits(5))),
    DifferentiationRule(7, BindChannel(ClassifierValues(workflow_id=5), 2)),
    DifferentiationRule(8, BindChannel(ClassifierValues(request_type=1, request_context=3), 2)),
    DifferentiationRule(9, BindObject(2, ClassifierValues(workflow_id=5), 10)),
    DifferentiationRule(10, BindObject(2, ClassifierValues(), 10)),
    DifferentiationRule(11, SetDefaultChannel(1)),
    EnforcementRule(12, 10, {"rate": 2_000_000}),
    EnforcementRule(13, 10, {}),
    EnforcementRule(14, 10, {"rate": 1.5e6}),
]


def test_rule_codecs_round_trip():
    for rule in RULE_CORPUS:
        msg = encode_rule(77, rule)
        wire = decode_body(encode_body(msg))
        assert decode_rule(wire) == rule, rule


def test_stage_info_round_trip():
    info = StageInfo(name="kvs", instance_id="kvs-1f3a", pid=1234, workflow_count=8)
    wire = decode_body(encode_body(encode_stage_info(5, info)))
    assert decode_stage_info(wire) == info


def test_stats_round_trip_preserves_floats():
    rows = [
        StatsRow(1, 2, 3, 4096, 4, 10**9, 4096.0),
        StatsRow(2, 0, 0, 0, 0, 0, 0.0),
        StatsRow(3, 7, 2, 12345, 9, 999_999_999, 12345.000012345),
    ]
    wire = decode_body(encode_body(encode_stats(8, rows)))
    assert decode_stats(wire) == rows


def test_stats_row_shape_enforced():
    with pytest.raises(ProtocolError):
        decode_stats(Message("collect_resp", 1, (("row", "1:2:3"),)))
    with pytest.raises(ProtocolError):
        decode_stats(Message("collect_resp", 1, (("row", "a:2:3:4:5:6:7"),)))


def test_state_codec_sorted_and_typed():
    msg = encode_rule(1, EnforcementRule(1, 5, {"z": 1, "a": 2.5}))
    assert msg.get("state") == "a:2.5;z:1"
    back = decode_rule(msg)
    assert back.state == {"a": 2.5, "z": 1}
    assert isinstance(back.state["z"], int)
    with pytest.raises(ProtocolError):
        decode_rule(Message("enf_rule", 1, (("rule", "1"), ("object", "5"), ("state", "a:b"))))


def _random_message(rng: random.Random) -> Message:
    pick = rng.randrange(7)
    msg_id = rng.randrange(0, 1 << 32)
    if pick == 0:
        return make_ack(msg_id)
    if pick == 1:
        return make_err(msg_id, rng.choice(["bad_rule", "timeout", "ej3"]), rng.choice(["", "detail text", "x" * 40]))
    if pick == 2:
        return Message(rng.choice(["stage_info_req", "collect_req"]), msg_id)
    if pick == 3:
        info = StageInfo(
            name=rng.choice(["kvs", "tenant", "s"]),
            instance_id=f"i-{rng.randrange(1 << 16):04x}",
            pid=rng.randrange(1, 1 << 22),
            workflow_count=rng.randrange(0, 64),
        )
        return encode_stage_info(msg_id, info)
    if pick == 4:
        rule = rng.choice(RULE_CORPUS)
        return encode_rule(msg_id, rule)
    if pick == 5:
        rows = [
            StatsRow(
                rng.randrange(1, 10),
                rng.randrange(0, 100),
                rng.randrange(0, 6),
                rng.randrange(0, 1 << 40),
                rng.randrange(0, 1 << 20),
                rng.randrange(0, 10**10),
                rng.random() * 1e9,
            )
            for _ in range(rng.randrange(0, 6))
        ]
        return encode_stats(msg_id, rows)
    return make_ack(msg_id)


def test_round_trip_corpus():
    rng = random.Random(7)
    reader = FrameReader()
    sent = []
    buf = bytearray()
    for _ in range(10_000):
        msg = _random_message(rng)
        sent.append(msg)
        buf.extend(encode_frame(msg))
    got = []
    view = bytes(buf)
    i = 0
    while i < len(view):
        step = rng.randrange(1, 4096)
        got.extend(reader.feed(view[i : i + step]))
        i += step
    assert got == sent


def test_fuzz_never_crashes():
    # A smaller cousin of the acceptance fuzz: random garbage, mutated
    # valid frames, truncations.  Only ProtocolError may escape.
    rng = random.Random(99)
    for _ in range(20_000):
        style = rng.randrange(3)
        if style == 0:
            blob = bytes(rng.randrange(256) for _ in range(rng.randrange(0, 64)))
        else:
            frame = bytearray(encode_frame(_random_message(rng)))
            if style == 1 and frame:
                for _ in range(rng.randrange(1, 4)):
                    frame[rng.randrange(len(frame))] ^= 1 << rng.randrange(8)
            else:
                frame = frame[: rng.randrange(len(frame) + 1)]
            blob = bytes(frame)
        reader = FrameReader()
        try:
            reader.feed(blob)
        except ProtocolError:
            pass


def test_unix_socket_round_trip(tmp_path):
    path = str(tmp_path / "ctrl.sock")
    server = listen(path)
    got = []

    def serve():
        conn, _ = server.accept()
        reader = FrameReader()
        while not got:
            data = conn.recv(4096)
            if not data:
                break
            got.extend(reader.feed(data))
        send_message(conn, make_ack(got[0].msg_id))
        conn.close()

    thread = threading.Thread(target=serve)
    thread.start()
    client = dial(path, timeout=5.0)
    send_message(client, Message("stage_info_req", 11))
    reader = FrameReader()
    reply = []
    while not reply:
        reply.extend(reader.feed(client.recv(4096)))
    client.close()
    thread.join(timeout=5)
    server.close()
    assert got[0].kind == "stage_info_req"
    assert reply[0] == make_ack(11)


def test_listen_replaces_stale_socket_file(tmp_path):
    path = str(tmp_path / "stale.sock")
    first = listen(path)
    first.close()
    # The file is still on disk; a fresh listener must take over.
    second = listen(path)
    second.close()


def test_tcp_endpoint_round_trip():
    server = listen("tcp:127.0.0.1:0")
    port = server.getsockname()[1]

    def serve():
        conn, _ = server.accept()
        send_message(conn, make_ack(1))
        conn.close()

    thread = threading.Thread(target=serve)
    thread.start()
    client = dial(f"tcp:127.0.0.1:{port}", timeout=5.0)
    reader = FrameReader()
    reply = []
    while not reply:
        reply.extend(reader.feed(client.recv(4096)))
    client.close()
    thread.join(timeout=5)
    server.close()
    assert reply[0] == make_ack(1)
