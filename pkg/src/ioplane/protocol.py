"""Wire protocol between the control plane and stages.

A frame is a little-endian u32 byte count followed by a UTF-8 body no
larger than 1 MiB.  The body is unit-separator (0x1F) text:

    kind \\x1F msg_id \\x1F key=value \\x1F key=value ...

Each kind declares its field names in a fixed order and the encoding is
canonical: fields appear exactly in declared order, so the same message
always produces the same bytes and golden vectors stay stable.  The
decoder is total; anything that is not a canonical message raises
ProtocolError rather than crashing, and a truncated frame is simply not
ready yet.

Nine kinds cover the five control calls plus plumbing: the handshake
pair (stage_info_req/resp), the three rule kinds, the statistics pair
(collect_req/resp), and ack/err.
"""
from __future__ import annotations

import os
import socket
import struct
from dataclasses import dataclass

from .routing import ClassifierMask, ClassifierValues
from .rules import (
    BindChannel,
    BindObject,
    CreateChannel,
    CreateObject,
    DifferentiationRule,
    EnforcementRule,
    HousekeepingRule,
    RemoveChannel,
    RemoveObject,
    Rule,
    SetDefaultChannel,
    SetMask,
)
from .types import StageInfo, StatsRow

MAX_BODY = 1 << 20
_SEP = "\x1f"

# Field order per kind is the canonical encoding order.  "row" is the
# one repeatable field.
_SCHEMAS: dict[str, tuple[str, ...]] = {
    "stage_info_req": (),
    "stage_info_resp": ("name", "instance", "pid", "workflows"),
    "hsk_rule": ("rule", "op", "channel", "object", "kind", "state"),
    "dif_rule": ("rule", "op", "mask", "channel", "object", "workflow", "type", "context"),
    "enf_rule": ("rule", "object", "state"),
    "collect_req": (),
    "collect_resp": ("row",),
    "ack": (),
    "err": ("code", "msg"),
}
_REPEATABLE = frozenset({"row"})


class ProtocolError(Exception):
    pass


@dataclass(frozen=True)
class Message:
    kind: str
    msg_id: int
    fields: tuple[tuple[str, str], ...] = ()

    def get(self, key: str) -> str | None:
        for k, v in self.fields:
            if k == key:
                return v
        return None

    def get_all(self, key: str) -> list[str]:
        return [v for k, v in self.fields if k == key]

    def require(self, key: str) -> str:
        value = self.get(key)
        if value is None:
            raise ProtocolError(f"{self.kind} message missing field {key!r}")
        return value


def _check_canonical(kind: str, fields: tuple[tuple[str, str], ...]) -> None:
    schema = _SCHEMAS.get(kind)
    if schema is None:
        raise ProtocolError(f"unknown message kind {kind!r}")
    last_index = -1
    for key, value in fields:
        if key not in schema:
            raise ProtocolError(f"{kind} message does not declare field {key!r}")
        index = schema.index(key)
        if index < last_index:
            raise ProtocolError(f"{kind} field {key!r} out of canonical order")
        if index == last_index and key not in _REPEATABLE:
            raise ProtocolError(f"{kind} field {key!r} repeated")
        if _SEP in key or _SEP in value:
            raise ProtocolError("separator byte inside field")
        last_index = index


def encode_body(message: Message) -> bytes:
    if message.msg_id < 0 or message.msg_id > 0xFFFFFFFFFFFFFFFF:
        raise ProtocolError(f"msg_id {message.msg_id} outside u64")
    _check_canonical(message.kind, message.fields)
    parts = [message.kind, str(message.msg_id)]
    parts.extend(f"{k}={v}" for k, v in message.fields)
    body = _SEP.join(parts).encode("utf-8")
    if len(body) > MAX_BODY:
        raise ProtocolError(f"body of {len(body)} bytes exceeds {MAX_BODY}")
    return body


def encode_frame(message: Message) -> bytes:
    body = encode_body(message)
    return struct.pack("<I", len(body)) + body


def decode_body(body: bytes) -> Message:
    if len(body) > MAX_BODY:
        raise ProtocolError(f"body of {len(body)} bytes exceeds {MAX_BODY}")
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"body is not UTF-8: {exc}") from None
    parts = text.split(_SEP)
    if len(parts) < 2:
        raise ProtocolError("body lacks kind and msg_id")
    kind = parts[0]
    try:
        msg_id = int(parts[1])
    except ValueError:
        raise ProtocolError(f"msg_id {parts[1]!r} is not an integer") from None
    if msg_id < 0 or msg_id > 0xFFFFFFFFFFFFFFFF:
        raise ProtocolError(f"msg_id {msg_id} outside u64")
    fields = []
    for part in parts[2:]:
        key, eq, value = part.partition("=")
        if not eq or not key:
            raise ProtocolError(f"malformed field {part!r}")
        fields.append((key, value))
    message = Message(kind, msg_id, tuple(fields))
    _check_canonical(kind, message.fields)
    return message


class FrameReader:
    """Streaming reassembler: feed arbitrary chunks, take whole messages."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 4:
                return out
            (length,) = struct.unpack_from("<I", self._buf)
            if length > MAX_BODY:
                raise ProtocolError(f"frame of {length} bytes exceeds {MAX_BODY}")
            if len(self._buf) < 4 + length:
                return out
            body = bytes(self._buf[4 : 4 + length])
            del self._buf[: 4 + length]
            out.append(decode_body(body))

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# -- transport ---------------------------------------------------------------
# An endpoint is a filesystem path (UNIX stream socket) or "tcp:host:port"
# for loopback testing; the framing is identical either way.


def _parse_tcp(endpoint: str) -> tuple[str, int] | None:
    if not endpoint.startswith("tcp:"):
        return None
    host, _, port = endpoint[4:].rpartition(":")
    return host or "127.0.0.1", int(port)


def listen(endpoint: str, backlog: int = 16) -> socket.socket:
    tcp = _parse_tcp(endpoint)
    if tcp is not None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind(tcp)
    else:
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        try:
            os.unlink(endpoint)
        except FileNotFoundError:
            pass
        sock.bind(endpoint)
    sock.listen(backlog)
    return sock


def dial(endpoint: str, timeout: float | None = None) -> socket.socket:
    tcp = _parse_tcp(endpoint)
    if tcp is not None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        address: str | tuple[str, int] = tcp
    else:
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        address = endpoint
    if timeout is not None:
        sock.settimeout(timeout)
    try:
        sock.connect(address)
    except OSError:
        sock.close()
        raise
    sock.settimeout(None)
    return sock


def send_message(sock: socket.socket, message: Message) -> None:
    sock.sendall(encode_frame(message))


# -- domain object codecs ----------------------------------------------------


def _encode_state(state: dict) -> str:
    parts = []
    for key in sorted(state):
        value = state[key]
        text = repr(value) if isinstance(value, float) else str(value)
        if ":" in key or ";" in key or "=" in key:
            raise ProtocolError(f"state key {key!r} contains a separator")
        parts.append(f"{key}:{text}")
    return ";".join(parts)


def _decode_state(text: str) -> dict:
    state: dict = {}
    if not text:
        return state
    for part in text.split(";"):
        key, colon, raw = part.partition(":")
        if not colon or not key:
            raise ProtocolError(f"malformed state entry {part!r}")
        try:
            state[key] = int(raw)
        except ValueError:
            try:
                state[key] = float(raw)
            except ValueError:
                raise ProtocolError(f"state value {raw!r} is not numeric") from None
    return state


def _int_field(message: Message, key: str) -> int:
    raw = message.require(key)
    try:
        return int(raw)
    except ValueError:
        raise ProtocolError(f"{message.kind} field {key}={raw!r} is not an integer") from None


def _opt_int_field(message: Message, key: str) -> int | None:
    raw = message.get(key)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ProtocolError(f"{message.kind} field {key}={raw!r} is not an integer") from None


def make_ack(msg_id: int) -> Message:
    return Message("ack", msg_id)

def make_err(msg_id: int, code: str, msg: str = "") -> Message:
    fields: list[tuple[str, str]] = [("code", code)]
    if msg:
        fields.append(("msg", msg))
    return Message("err", msg_id, tuple(fields))


def encode_stage_info(msg_id: int, info: StageInfo) -> Message:
    return Message(
        "stage_info_resp",
        msg_id,
        (
            ("name", info.name),
            ("instance", info.instance_id),
            ("pid", str(info.pid)),
            ("workflows", str(info.workflow_count)),
        ),
    )


def decode_stage_info(message: Message) -> StageInfo:
    return StageInfo(
        name=message.require("name"),
        instance_id=message.require("instance"),
        pid=_int_field(message, "pid"),
        workflow_count=_int_field(message, "workflows"),
    )


def encode_rule(msg_id: int, rule: Rule) -> Message:
    if isinstance(rule, HousekeepingRule):
        return _encode_hsk(msg_id, rule)
    if isinstance(rule, DifferentiationRule):
        return _encode_dif(msg_id, rule)
    if isinstance(rule, EnforcementRule):
        fields: list[tuple[str, str]] = [
            ("rule", str(rule.rule_id)),
            ("object", str(rule.object_id)),
        ]
        if rule.state:
            fields.append(("state", _encode_state(rule.state)))
        return Message("enf_rule", msg_id, tuple(fields))
    raise ProtocolError(f"cannot encode rule {rule!r}")


def _encode_hsk(msg_id: int, rule: HousekeepingRule) -> Message:
    op = rule.op
    fields: list[tuple[str, str]] = [("rule", str(rule.rule_id))]
    if isinstance(op, CreateChannel):
        fields += [("op", "create_channel"), ("channel", str(op.channel_id))]
    elif isinstance(op, CreateObject):
        fields += [
            ("op", "create_object"),
            ("channel", str(op.channel_id)),
            ("object", str(op.object_id)),
            ("kind", op.kind),
        ]
        if op.state:
            fields.append(("state", _encode_state(op.state)))
    elif isinstance(op, RemoveObject):
        fields += [
            ("op", "remove_object"),
            ("channel", str(op.channel_id)),
            ("object", str(op.object_id)),
        ]
    elif isinstance(op, RemoveChannel):
        fields += [("op", "remove_channel"), ("channel", str(op.channel_id))]
    else:
        raise ProtocolError(f"cannot encode housekeeping op {op!r}")
    return Message("hsk_rule", msg_id, tuple(fields))


def _classifier_fields(values: ClassifierValues) -> list[tuple[str, str]]:
    fields = []
    if values.workflow_id is not None:
        fields.append(("workflow", str(values.workflow_id)))
    if values.request_type is not None:
        fields.append(("type", str(int(values.request_type))))
    if values.request_context is not None:
        fields.append(("context", str(int(values.request_context))))
    return fields


def _encode_dif(msg_id: int, rule: DifferentiationRule) -> Message:
    op = rule.op
    fields: list[tuple[str, str]] = [("rule", str(rule.rule_id))]
    if isinstance(op, SetMask):
        fields += [("op", "set_mask"), ("mask", str(op.mask.to_bits()))]
    elif isinstance(op, BindChannel):
        fields += [("op", "bind_channel"), ("channel", str(op.channel_id))]
        fields += _classifier_fields(op.classifiers)
    elif isinstance(op, BindObject):
        fields += [
            ("op", "bind_object"),
            ("channel", str(op.channel_id)),
            ("object", str(op.object_id)),
        ]
        fields += _classifier_fields(op.classifiers)
    elif isinstance(op, SetDefaultChannel):
        fields += [("op", "set_default_channel"), ("channel", str(op.channel_id))]
    else:
        raise ProtocolError(f"cannot encode differentiation op {op!r}")
    return Message("dif_rule", msg_id, tuple(fields))


def decode_rule(message: Message) -> Rule:
    if message.kind == "hsk_rule":
        return _decode_hsk(message)
    if message.kind == "dif_rule":
        return _decode_dif(message)
    if message.kind == "enf_rule":
        state_raw = message.get("state")
        return EnforcementRule(
            rule_id=_int_field(message, "rule"),
            object_id=_int_field(message, "object"),
            state=_decode_state(state_raw) if state_raw is not None else {},
        )
    raise ProtocolError(f"message kind {message.kind!r} is not a rule")


def _decode_hsk(message: Message) -> HousekeepingRule:
    rule_id = _int_field(message, "rule")
    op_name = message.require("op")
    if op_name == "create_channel":
        op: object = CreateChannel(_int_field(message, "channel"))
    elif op_name == "create_object":
        state_raw = message.get("state")
        op = CreateObject(
            channel_id=_int_field(message, "channel"),
            object_id=_int_field(message, "object"),
            kind=message.require("kind"),
            state=_decode_state(state_raw) if state_raw is not None else {},
        )
    elif op_name == "remove_object":
        op = RemoveObject(_int_field(message, "channel"), _int_field(message, "object"))
    elif op_name == "remove_channel":
        op = RemoveChannel(_int_field(message, "channel"))
    else:
        raise ProtocolError(f"unknown housekeeping op {op_name!r}")
    return HousekeepingRule(rule_id, op)


def _decode_classifiers(message: Message) -> ClassifierValues:
    return ClassifierValues(
        workflow_id=_opt_int_field(message, "workflow"),
        request_type=_opt_int_field(message, "type"),
        request_context=_opt_int_field(message, "context"),
    )


def _decode_dif(message: Message) -> DifferentiationRule:
    rule_id = _int_field(message, "rule")
    op_name = message.require("op")
    if op_name == "set_mask":
        bits = _int_field(message, "mask")
        try:
            op: object = SetMask(ClassifierMask.from_bits(bits))
        except ValueError as exc:
            raise ProtocolError(str(exc)) from None
    elif op_name == "bind_channel":
        op = BindChannel(_decode_classifiers(message), _int_field(message, "channel"))
    elif op_name == "bind_object":
        op = BindObject(
            channel_id=_int_field(message, "channel"),
            classifiers=_decode_classifiers(message),
            object_id=_int_field(message, "object"),
        )
    elif op_name == "set_default_channel":
        op = SetDefaultChannel(_int_field(message, "channel"))
    else:
        raise ProtocolError(f"unknown differentiation op {op_name!r}")
    return DifferentiationRule(rule_id, op)


def encode_stats(msg_id: int, rows: list[StatsRow]) -> Message:
    fields = tuple(
        (
            "row",
            f"{r.channel_id}:{r.workflow_id}:{r.request_context}:"
            f"{r.bytes_enforced}:{r.ops}:{r.window_ns}:{r.throughput_bps!r}",
        )
        for r in rows
    )
    return Message("collect_resp", msg_id, fields)


def decode_stats(message: Message) -> list[StatsRow]:
    rows = []
    for raw in message.get_all("row"):
        parts = raw.split(":")
        if len(parts) != 7:
            raise ProtocolError(f"stats row {raw!r} does not have 7 fields")
        try:
            rows.append(
                StatsRow(
                    channel_id=int(parts[0]),
                    workflow_id=int(parts[1]),
                    request_context=int(parts[2]),
                    bytes_enforced=int(parts[3]),
                    ops=int(parts[4]),
                    window_ns=int(parts[5]),
                    throughput_bps=float(parts[6]),
                )
            )
        except ValueError:
            raise ProtocolError(f"stats row {raw!r} has non-numeric fields") from None
    return rows
