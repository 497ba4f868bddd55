"""The embeddable data-plane stage.

A stage intercepts a host layer's requests, routes each through the
two-phase differentiation tables, and enforces it in the selected
channel.  All topology lives in one immutable snapshot (_State) swapped
atomically on every accepted rule, so a concurrent enforce() always sees
either the whole pre-rule stage or the whole post-rule stage.

The control agent is a background thread that dials the control plane,
answers the handshake, and applies rules in arrival order.  Without an
endpoint the stage runs standalone; rules can then come from a local
rule file or direct apply_rule calls.  An unconfigured stage passes
everything through untouched, so embedding the stage can never deadlock
a host that has not set up any policy yet.
"""
from __future__ import annotations

import itertools
import os
import socket as socket_mod
import threading
from dataclasses import dataclass, field

from .clock import Clock, RealClock
from .enforcement import Channel, make_object
from .protocol import (
    FrameReader,
    Message,
    ProtocolError,
    decode_rule,
    dial,
    encode_frame,
    encode_stage_info,
    encode_stats,
    make_ack,
    make_err,
)
from .routing import RoutingTable, binding_token, select_channel, select_object
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
from .types import (
    Context,
    EnforcementError,
    EnforcementResult,
    EnforcementStatus,
    RoutingError,
    RuleError,
    StageError,
    StageInfo,
    StatsRow,
)

_instance_seq = itertools.count(1)


@dataclass(frozen=True)
class StageConfig:
    name: str = "stage"
    control_endpoint: str | None = None
    fail_open: bool = True
    default_channel: int | None = None
    workflow_count: int = 0
    rule_file: str | None = None
    connect_retry_ms: int = 500


@dataclass(frozen=True)
class _State:
    table: RoutingTable
    channels: dict[int, Channel] = field(default_factory=dict)


class Stage:
    def __init__(self, config: StageConfig | None = None, clock: Clock | None = None) -> None:
        self._config = config or StageConfig()
        self._clock = clock or RealClock()
        self._info = StageInfo(
            name=self._config.name,
            instance_id=f"{self._config.name}#{next(_instance_seq)}",
            pid=os.getpid(),
            workflow_count=self._config.workflow_count,
        )
        self._state = _State(RoutingTable())
        # Mutable routing bookkeeping, guarded by _mutator; the snapshot
        # in _state is rebuilt from these on every accepted rule.
        self._mutator = threading.Lock()
        self._mask = RoutingTable().mask
        self._channel_map: dict[int, int] = {}
        self._object_maps: dict[int, dict[int, int]] = {}
        self._default_channel: int | None = self._config.default_channel
        self._default_objects: dict[int, int] = {}
        self._closing = threading.Event()
        self._agent: threading.Thread | None = None
        self._agent_sock: socket_mod.socket | None = None
        if self._config.rule_file:
            load_rule_file(self, self._config.rule_file)

    # -- identity --------------------------------------------------------

    @property
    def info(self) -> StageInfo:
        return self._info

    @property
    def clock(self) -> Clock:
        return self._clock

    # -- data plane ------------------------------------------------------

    def enforce(self, ctx: Context, payload: bytes | None = None) -> EnforcementResult:
        state = self._state
        if not state.channels:
            return EnforcementResult(
                EnforcementStatus.OK, ctx.request_size, 0, payload, detail="pass-through"
            )
        try:
            channel_id = select_channel(state.table, ctx)
            object_id = select_object(state.table, channel_id, ctx)
            channel = state.channels.get(channel_id)
            if channel is None:
                raise RoutingError(f"channel {channel_id} no longer present")
            wait_ns = channel.enforce(object_id, ctx)
            return EnforcementResult(
                EnforcementStatus.OK, ctx.request_size, wait_ns, payload, channel_id, object_id
            )
        except RoutingError as exc:
            if self._config.fail_open:
                return EnforcementResult(
                    EnforcementStatus.OK, ctx.request_size, 0, payload, detail=str(exc)
                )
            return EnforcementResult(EnforcementStatus.ROUTING_ERROR, 0, detail=str(exc))
        except EnforcementError as exc:
            if self._config.fail_open:
                return EnforcementResult(
                    EnforcementStatus.OK, ctx.request_size, 0, payload, detail=str(exc)
                )
            return EnforcementResult(EnforcementStatus.ENFORCEMENT_ERROR, 0, detail=str(exc))

    def collect(self) -> list[StatsRow]:
        if self._closing.is_set():
            raise StageError("stage closed")
        state = self._state
        now = self._clock.now_ns()
        rows: list[StatsRow] = []
        for channel_id in sorted(state.channels):
            rows.extend(state.channels[channel_id].collect(now))
        return rows

    # -- rule application ------------------------------------------------

    def apply_rule(self, rule: Rule) -> None:
        if self._closing.is_set():
            raise StageError("stage closed")
        with self._mutator:
            if isinstance(rule, HousekeepingRule):
                self._apply_hsk(rule)
            elif isinstance(rule, DifferentiationRule):
                self._apply_dif(rule)
            elif isinstance(rule, EnforcementRule):
                self._apply_enf(rule)
            else:
                raise RuleError(f"unknown rule {rule!r}")

    def _apply_hsk(self, rule: HousekeepingRule) -> None:
        op = rule.op
        channels = self._state.channels
        if isinstance(op, CreateChannel):
            if op.channel_id in channels:
                raise RuleError(f"channel {op.channel_id} already exists")
            new = dict(channels)
            new[op.channel_id] = Channel(op.channel_id, self._clock)
            self._swap(new)
        elif isinstance(op, CreateObject):
            channel = channels.get(op.channel_id)
            if channel is None:
                raise RuleError(f"unknown channel {op.channel_id}")
            if any(op.object_id in ch.object_ids() for ch in channels.values()):
                raise RuleError(f"object {op.object_id} already exists")
            try:
                obj = make_object(op.kind, dict(op.state), self._clock)
            except ValueError as exc:
                raise RuleError(str(exc)) from None
            channel.add_object(op.object_id, obj)
            self._swap(channels)
        elif isinstance(op, RemoveObject):
            channel = channels.get(op.channel_id)
            if channel is None:
                raise RuleError(f"unknown channel {op.channel_id}")
            try:
                channel.remove_object(op.object_id)
            except KeyError:
                raise RuleError(
                    f"unknown object {op.object_id} in channel {op.channel_id}"
                ) from None
            object_map = self._object_maps.get(op.channel_id)
            if object_map:
                for token in [t for t, o in object_map.items() if o == op.object_id]:
                    del object_map[token]
            if self._default_objects.get(op.channel_id) == op.object_id:
                del self._default_objects[op.channel_id]
            self._swap(channels)
        elif isinstance(op, RemoveChannel):
            channel = channels.get(op.channel_id)
            if channel is None:
                raise RuleError(f"unknown channel {op.channel_id}")
            new = dict(channels)
            del new[op.channel_id]
            for token in [t for t, c in self._channel_map.items() if c == op.channel_id]:
                del self._channel_map[token]
            self._object_maps.pop(op.channel_id, None)
            self._default_objects.pop(op.channel_id, None)
            if self._default_channel == op.channel_id:
                self._default_channel = None
            self._swap(new)
            channel.drain_and_close()
        else:
            raise RuleError(f"unknown housekeeping op {op!r}")

    def _apply_dif(self, rule: DifferentiationRule) -> None:
        op = rule.op
        channels = self._state.channels
        if isinstance(op, SetMask):
            if self._channel_map or any(self._object_maps.values()):
                raise RuleError("cannot change the mask while bindings exist")
            self._mask = op.mask
            self._swap(channels)
        elif isinstance(op, BindChannel):
            if op.channel_id not in channels:
                raise RuleError(f"unknown channel {op.channel_id}")
            try:
                token = binding_token(self._mask, op.classifiers)
            except ValueError as exc:
                raise RuleError(str(exc)) from None
            if token in self._channel_map:
                raise RuleError(
                    f"token 0x{token:08x} already maps to channel {self._channel_map[token]}"
                )
            self._channel_map[token] = op.channel_id
            self._swap(channels)
        elif isinstance(op, BindObject):
            channel = channels.get(op.channel_id)
            if channel is None:
                raise RuleError(f"unknown channel {op.channel_id}")
            if op.object_id not in channel.object_ids():
                raise RuleError(
                    f"unknown object {op.object_id} in channel {op.channel_id}"
                )
            if op.classifiers.empty:
                if op.channel_id in self._default_objects:
                    raise RuleError(
                        f"channel {op.channel_id} already has a default object"
                    )
                self._default_objects[op.channel_id] = op.object_id
                self._swap(channels)
                return
            try:
                token = binding_token(self._mask, op.classifiers)
            except ValueError as exc:
                raise RuleError(str(exc)) from None
            object_map = self._object_maps.setdefault(op.channel_id, {})
            if token in object_map:
                raise RuleError(
                    f"token 0x{token:08x} already maps to object {object_map[token]} "
                    f"in channel {op.channel_id}"
                )
            object_map[token] = op.object_id
            self._swap(channels)
        elif isinstance(op, SetDefaultChannel):
            if op.channel_id not in channels:
                raise RuleError(f"unknown channel {op.channel_id}")
            self._default_channel = op.channel_id
            self._swap(channels)
        else:
            raise RuleError(f"unknown differentiation op {op!r}")

    def _apply_enf(self, rule: EnforcementRule) -> None:
        for channel in self._state.channels.values():
            obj = channel.get_object(rule.object_id)
            if obj is not None:
                try:
                    obj.configure(dict(rule.state))
                except (ValueError, EnforcementError) as exc:
                    raise RuleError(str(exc)) from None
                return
        raise RuleError(f"unknown object {rule.object_id}")

    def _swap(self, channels: dict[int, Channel]) -> None:
        """Rebuild the routing snapshot; caller holds _mutator."""
        table = RoutingTable(
            mask=self._mask,
            channel_map=dict(self._channel_map),
            object_maps={c: dict(m) for c, m in self._object_maps.items() if m},
            default_channel=self._default_channel,
            default_objects=dict(self._default_objects),
            channel_objects={c: ch.object_ids() for c, ch in channels.items()},
        )
        self._state = _State(table, dict(channels))

    # -- control agent ---------------------------------------------------

    def start(self) -> None:
        """Connects to the control plane when an endpoint is configured."""
        if self._config.control_endpoint is None or self._agent is not None:
            return
        self._agent = threading.Thread(
            target=self._agent_loop, name=f"{self._info.instance_id}-agent", daemon=True
        )
        self._agent.start()

    def close(self) -> None:
        self._closing.set()
        sock = self._agent_sock
        if sock is not None:
            try:
                sock.shutdown(socket_mod.SHUT_RDWR)
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass
        if self._agent is not None:
            self._agent.join(timeout=5)
            self._agent = None
        for channel in self._state.channels.values():
            for object_id in channel.object_ids():
                obj = channel.get_object(object_id)
                if obj is not None:
                    obj.close()

    def _agent_loop(self) -> None:
        endpoint = self._config.control_endpoint
        assert endpoint is not None
        while not self._closing.is_set():
            try:
                sock = dial(endpoint)
            except OSError:
                self._closing.wait(self._config.connect_retry_ms / 1000)
                continue
            self._agent_sock = sock
            try:
                self._serve_connection(sock)
            except (OSError, ProtocolError):
                pass
            finally:
                self._agent_sock = None
                try:
                    sock.close()
                except OSError:
                    pass
            self._closing.wait(self._config.connect_retry_ms / 1000)

    def _serve_connection(self, sock: socket_mod.socket) -> None:
        reader = FrameReader()
        last_rule_id = 0
        while not self._closing.is_set():
            data = sock.recv(65536)
            if not data:
                return
            for message in reader.feed(data):
                reply = self._handle_message(message, last_rule_id)
                if isinstance(reply, tuple):
                    reply, last_rule_id = reply
                sock.sendall(encode_frame(reply))
                if reply.kind == "err" and reply.get("code") == "protocol_error":
                    return

    def _handle_message(self, message: Message, last_rule_id: int):
        if message.kind == "stage_info_req":
            return encode_stage_info(message.msg_id, self._info)
        if message.kind == "collect_req":
            return encode_stats(message.msg_id, self.collect())
        if message.kind in ("hsk_rule", "dif_rule", "enf_rule"):
            try:
                rule = decode_rule(message)
            except ProtocolError as exc:
                return make_err(message.msg_id, "protocol_error", str(exc))
            if rule.rule_id <= last_rule_id:
                return make_err(
                    message.msg_id,
                    "protocol_error",
                    f"rule id {rule.rule_id} not after {last_rule_id}",
                )
            try:
                self.apply_rule(rule)
            except RuleError as exc:
                return (make_err(message.msg_id, "rule_error", str(exc)), rule.rule_id)
            return (make_ack(message.msg_id), rule.rule_id)
        return make_err(message.msg_id, "protocol_error", f"unexpected kind {message.kind}")


def load_rule_file(stage: Stage, path: str) -> int:
    """Applies a standalone rule file: one rule per line, tab-separated
    wire fields.  Returns the number of rules applied."""
    applied = 0
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            kind = parts[0]
            fields = []
            for part in parts[1:]:
                key, eq, value = part.partition("=")
                if not eq:
                    raise RuleError(f"{path}:{lineno}: malformed field {part!r}")
                fields.append((key, value))
            try:
                rule = decode_rule(Message(kind, 0, tuple(fields)))
                stage.apply_rule(rule)
            except (ProtocolError, RuleError) as exc:
                raise RuleError(f"{path}:{lineno}: {exc}") from None
            applied += 1
    return applied
