"""Control plane: stage registry, telemetry, and the feedback policies.

The two policy algorithms are pure functions (tail_latency_step and
fair_share_step) so tests can hit them with oracle vectors; the policy
classes around them own stage setup and rule emission, and
run_control_loop drives everything on a clock.  Stages attach through a
StageLink: LocalStageLink calls a stage in the same process (what the
simulations use, under virtual time), SocketStageLink speaks the wire
protocol to a remote stage process.
"""
from __future__ import annotations

import re
import socket
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace

from .clock import Clock
from .protocol import (
    FrameReader,
    Message,
    ProtocolError,
    decode_stage_info,
    decode_stats,
    encode_frame,
    encode_rule,
)
from .routing import ClassifierMask, ClassifierValues
from .rules import (
    BindChannel,
    BindObject,
    CreateChannel,
    CreateObject,
    DifferentiationRule,
    EnforcementRule,
    HousekeepingRule,
    Rule,
    SetDefaultChannel,
    SetMask,
)
from .stage import Stage
from .types import RequestContext, RuleError, StageError, StageInfo, StatsRow

MIB = 1 << 20
GIB = 1 << 30


# -- pure policy steps -------------------------------------------------------


@dataclass(frozen=True)
class TailLatencyConfig:
    kvs_bandwidth_bps: int = 200 * MIB
    min_bandwidth_bps: int = 10 * MIB
    loop_interval_s: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.min_bandwidth_bps <= self.kvs_bandwidth_bps:
            raise ValueError("need 0 < min_bandwidth <= kvs_bandwidth")
        if self.loop_interval_s <= 0:
            raise ValueError("loop_interval must be positive")


@dataclass(frozen=True)
class TailLatencyTelemetry:
    foreground_bps: float = 0.0
    flush_bps: float = 0.0
    low_compaction_bps: float = 0.0
    high_compaction_bps: float = 0.0


@dataclass(frozen=True)
class TailLatencyAllocation:
    flush_bps: int
    low_compaction_bps: int
    high_compaction_bps: int


def tail_latency_step(
    cfg: TailLatencyConfig, telemetry: TailLatencyTelemetry
) -> TailLatencyAllocation:
    """One feedback iteration: splits the bandwidth clients are not using
    among background classes by priority.

    Flush and low-level compaction are the latency-critical classes:
    when both are active each gets half the leftover, when one is active
    it gets all of it, and high-level compaction gets the leftover only
    when neither is running.  Every output is floored at the minimum
    bandwidth so no class ever starves outright.
    """
    minimum = cfg.min_bandwidth_bps
    foreground = max(telemetry.foreground_bps, 0.0)
    flush_active = telemetry.flush_bps > 0
    low_active = telemetry.low_compaction_bps > 0
    leftover = max(cfg.kvs_bandwidth_bps - foreground, float(minimum))
    if flush_active and low_active:
        split = leftover / 2
        alloc = (split, split, float(minimum))
    elif flush_active:
        alloc = (leftover, float(minimum), float(minimum))
    elif low_active:
        alloc = (float(minimum), leftover, float(minimum))
    else:
        alloc = (float(minimum), float(minimum), leftover)
    return TailLatencyAllocation(
        flush_bps=max(int(round(alloc[0])), minimum),
        low_compaction_bps=max(int(round(alloc[1])), minimum),
        high_compaction_bps=max(int(round(alloc[2])), minimum),
    )


@dataclass(frozen=True)
class FairShareConfig:
    max_bandwidth_bps: int = 1 * GIB
    demands_bps: dict[str, int] = field(default_factory=dict)
    loop_interval_s: float = 1.0
    calibrate: bool = False

    def __post_init__(self) -> None:
        if self.max_bandwidth_bps <= 0:
            raise ValueError("max_bandwidth must be positive")
        if self.loop_interval_s <= 0:
            raise ValueError("loop_interval must be positive")
        for name, demand in self.demands_bps.items():
            if demand <= 0:
                raise ValueError(f"demand for {name!r} must be positive")


def fair_share_step(max_bandwidth_bps: int, demands_bps: dict[str, float]) -> dict[str, int]:
    """Max-min fair allocation of the disk budget.

    Pass one serves instances in ascending demand order, each getting
    min(demand, equal share of what remains).  Pass two hands any
    leftover back in equal parts, on top of pass-one rates, so the
    budget is spent whenever demand exists to absorb it.
    """
    if not demands_bps:
        raise ValueError("no active instances")
    order = sorted(demands_bps.items(), key=lambda kv: (kv[1], kv[0]))
    count = len(order)
    left = float(max_bandwidth_bps)
    rates: dict[str, float] = {}
    for index, (name, demand) in enumerate(order):
        rate = min(float(demand), left / (count - index))
        rates[name] = rate
        left -= rate
    bonus = left / count
    return {name: int(round(rate + bonus)) for name, rate in rates.items()}


# -- stage links -------------------------------------------------------------


class LinkError(Exception):
    pass


class StageLink(ABC):
    """Control-plane handle to one attached stage."""

    def __init__(self) -> None:
        self.alive = True

    @property
    @abstractmethod
    def info(self) -> StageInfo: ...

    @abstractmethod
    def apply(self, rule: Rule) -> None:
        """Sends one rule; assigns the connection's next rule id when the
        rule carries id 0.  Raises LinkError if the stage is gone and
        RuleError if the stage rejected the rule."""

    @abstractmethod
    def collect(self) -> list[StatsRow]: ...

    def close(self) -> None:
        self.alive = False


class LocalStageLink(StageLink):
    def __init__(self, stage: Stage) -> None:
        super().__init__()
        self._stage = stage
        self._rule_seq = 0

    @property
    def info(self) -> StageInfo:
        return self._stage.info

    def apply(self, rule: Rule) -> None:
        if not self.alive:
            raise LinkError("link closed")
        if rule.rule_id == 0:
            self._rule_seq += 1
            rule = replace(rule, rule_id=self._rule_seq)
        try:
            self._stage.apply_rule(rule)
        except RuleError:
            # A rejected rule is the stage answering, not the stage gone.
            raise
        except StageError as exc:
            self.alive = False
            raise LinkError(str(exc)) from None

    def collect(self) -> list[StatsRow]:
        if not self.alive:
            raise LinkError("link closed")
        try:
            return self._stage.collect()
        except StageError as exc:
            self.alive = False
            raise LinkError(str(exc)) from None


class SocketStageLink(StageLink):
    """One accepted control connection; requests are strictly sequential."""

    def __init__(self, sock: socket.socket, timeout_s: float = 10.0) -> None:
        super().__init__()
        self._sock = sock
        self._sock.settimeout(timeout_s)
        self._reader = FrameReader()
        self._lock = threading.Lock()
        self._msg_seq = 0
        self._rule_seq = 0
        reply = self._roundtrip(Message("stage_info_req", self._next_msg_id()))
        if reply.kind != "stage_info_resp":
            raise LinkError(f"handshake got {reply.kind}")
        try:
            self._info = decode_stage_info(reply)
        except ProtocolError as exc:
            raise LinkError(f"bad handshake: {exc}") from None

    @property
    def info(self) -> StageInfo:
        return self._info

    def apply(self, rule: Rule) -> None:
        if rule.rule_id == 0:
            self._rule_seq += 1
            rule = replace(rule, rule_id=self._rule_seq)
        reply = self._roundtrip(encode_rule(self._next_msg_id(), rule))
        if reply.kind == "ack":
            return
        if reply.kind == "err":
            code = reply.get("code") or "?"
            detail = reply.get("msg") or ""
            if code == "rule_error":
                raise RuleError(detail)
            self._fail()
            raise LinkError(f"{code}: {detail}")
        self._fail()
        raise LinkError(f"unexpected reply kind {reply.kind}")

    def collect(self) -> list[StatsRow]:
        reply = self._roundtrip(Message("collect_req", self._next_msg_id()))
        if reply.kind != "collect_resp":
            self._fail()
            raise LinkError(f"unexpected reply kind {reply.kind}")
        try:
            return decode_stats(reply)
        except ProtocolError as exc:
            self._fail()
            raise LinkError(str(exc)) from None

    def close(self) -> None:
        super().close()
        try:
            self._sock.close()
        except OSError:
            pass

    def _next_msg_id(self) -> int:
        self._msg_seq += 1
        return self._msg_seq

    def _fail(self) -> None:
        self.alive = False
        try:
            self._sock.close()
        except OSError:
            pass

    def _roundtrip(self, message: Message) -> Message:
        with self._lock:
            if not self.alive:
                raise LinkError("link closed")
            try:
                self._sock.sendall(encode_frame(message))
                while True:
                    data = self._sock.recv(65536)
                    if not data:
                        self._fail()
                        raise LinkError("connection closed by stage")
                    messages = self._reader.feed(data)
                    if messages:
                        if len(messages) > 1:
                            self._fail()
                            raise LinkError("pipelined reply on sequential connection")
                        reply = messages[0]
                        if reply.msg_id != message.msg_id:
                            self._fail()
                            raise LinkError(
                                f"reply id {reply.msg_id} does not match {message.msg_id}"
                            )
                        return reply
            except (OSError, ProtocolError) as exc:
                self._fail()
                raise LinkError(str(exc)) from None


class StageRegistry:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._links: list[StageLink] = []

    def add(self, link: StageLink) -> None:
        with self._lock:
            self._links.append(link)

    def drop(self, link: StageLink) -> None:
        link.close()
        with self._lock:
            if link in self._links:
                self._links.remove(link)

    def links(self) -> list[StageLink]:
        with self._lock:
            return [link for link in self._links if link.alive]

    def close(self) -> None:
        with self._lock:
            links, self._links = self._links, []
        for link in links:
            link.close()


# -- policies ----------------------------------------------------------------


class TailLatencyPolicy:
    """Implements the flush/compaction prioritization scheme.

    Four channels, one enforcement object each: a Noop on the foreground
    channel (statistics only, never throttled) and a DRL apiece for
    flushes, low-level compactions, and high-level compactions.  The two
    compaction classes must not share a channel: queues are FIFO, so a
    high-level run crawling at the floor rate would hold the head of the
    queue and starve the prioritized class regardless of its allocation.
    Requests are told apart by request context alone; the foreground
    channel is the default route.
    """

    CH_FOREGROUND = 1
    CH_FLUSH = 2
    CH_COMPACTION_LOW = 3
    CH_COMPACTION_HIGH = 4
    OBJ_NOOP = 1
    OBJ_FLUSH = 2
    OBJ_LOW = 3
    OBJ_HIGH = 4

    def __init__(self, cfg: TailLatencyConfig) -> None:
        self.cfg = cfg
        self.last_allocation: dict[str, TailLatencyAllocation] = {}

    def setup(self, link: StageLink) -> None:
        cfg = self.cfg
        drl = lambda rate: {"rate": rate, "refill_period_us": 100_000}  # noqa: E731
        hsk_ops = [
            CreateChannel(self.CH_FOREGROUND),
            CreateObject(self.CH_FOREGROUND, self.OBJ_NOOP, "noop"),
            CreateChannel(self.CH_FLUSH),
            CreateObject(self.CH_FLUSH, self.OBJ_FLUSH, "drl", drl(cfg.kvs_bandwidth_bps)),
            CreateChannel(self.CH_COMPACTION_LOW),
            CreateObject(self.CH_COMPACTION_LOW, self.OBJ_LOW, "drl", drl(cfg.kvs_bandwidth_bps)),
            CreateChannel(self.CH_COMPACTION_HIGH),
            CreateObject(self.CH_COMPACTION_HIGH, self.OBJ_HIGH, "drl", drl(cfg.min_bandwidth_bps)),
        ]
        for op in hsk_ops:
            link.apply(HousekeepingRule(0, op))
        ctx_only = ClassifierMask(workflow_id=False, request_type=False, request_context=True)
        flush = ClassifierValues(request_context=int(RequestContext.BG_FLUSH))
        low = ClassifierValues(request_context=int(RequestContext.BG_COMPACTION_L0_L1))
        high = ClassifierValues(request_context=int(RequestContext.BG_COMPACTION_HIGH))
        dif_ops = [
            SetMask(ctx_only),
            BindChannel(flush, self.CH_FLUSH),
            BindChannel(low, self.CH_COMPACTION_LOW),
            BindChannel(high, self.CH_COMPACTION_HIGH),
            BindObject(self.CH_COMPACTION_LOW, low, self.OBJ_LOW),
            BindObject(self.CH_COMPACTION_HIGH, high, self.OBJ_HIGH),
            SetDefaultChannel(self.CH_FOREGROUND),
        ]
        for op in dif_ops:
            link.apply(DifferentiationRule(0, op))

    def telemetry_from(self, rows: list[StatsRow]) -> TailLatencyTelemetry:
        foreground = flush = low = high = 0.0
        for row in rows:
            if row.channel_id == self.CH_FOREGROUND:
                foreground += row.throughput_bps
            elif row.channel_id == self.CH_FLUSH:
                flush += row.throughput_bps
            elif row.channel_id == self.CH_COMPACTION_LOW:
                low += row.throughput_bps
            elif row.channel_id == self.CH_COMPACTION_HIGH:
                high += row.throughput_bps
        return TailLatencyTelemetry(foreground, flush, low, high)

    def step(self, stats_by_link: dict[StageLink, list[StatsRow]]) -> None:
        for link, rows in stats_by_link.items():
            allocation = tail_latency_step(self.cfg, self.telemetry_from(rows))
            self.last_allocation[link.info.instance_id] = allocation
            try:
                link.apply(EnforcementRule(0, self.OBJ_FLUSH, {"rate": allocation.flush_bps}))
                link.apply(EnforcementRule(0, self.OBJ_LOW, {"rate": allocation.low_compaction_bps}))
                link.apply(EnforcementRule(0, self.OBJ_HIGH, {"rate": allocation.high_compaction_bps}))
            except (LinkError, RuleError):
                # Stage went away mid-iteration; next collect drops it.
                continue


class FairSharePolicy:
    """Per-instance DRL driven by the max-min fair share step.

    Each attached stage is one tenant instance with a single channel and
    one DRL as its default route; demands are configured by stage name.
    """

    CH_MAIN = 1
    OBJ_DRL = 1

    def __init__(self, cfg: FairShareConfig) -> None:
        self.cfg = cfg
        self.last_rates: dict[str, int] = {}
        self.history: list[dict[str, int]] = []
        self._factors: dict[str, float] = {}

    def setup(self, link: StageLink) -> None:
        demand = self.cfg.demands_bps.get(link.info.name)
        if demand is None:
            raise RuleError(f"no demand configured for stage {link.info.name!r}")
        link.apply(HousekeepingRule(0, CreateChannel(self.CH_MAIN)))
        link.apply(
            HousekeepingRule(
                0,
                CreateObject(
                    self.CH_MAIN,
                    self.OBJ_DRL,
                    "drl",
                    {"rate": demand, "refill_period_us": 100_000},
                ),
            )
        )
        link.apply(DifferentiationRule(0, SetDefaultChannel(self.CH_MAIN)))

    def step(self, stats_by_link: dict[StageLink, list[StatsRow]]) -> None:
        demands = {}
        by_name = {}
        for link in stats_by_link:
            demand = self.cfg.demands_bps.get(link.info.name)
            if demand is not None:
                demands[link.info.name] = demand
                by_name[link.info.name] = link
        if not demands:
            self.last_rates = {}
            self.history.append({})
            return
        rates = fair_share_step(self.cfg.max_bandwidth_bps, demands)
        self.last_rates = {}
        for name, target in rates.items():
            emitted = target
            if self.cfg.calibrate:
                measured = sum(r.throughput_bps for r in stats_by_link[by_name[name]])
                factor = self._factors.get(name, 1.0)
                if measured > 0 and abs(measured - target) / target > 0.05:
                    factor = min(max(factor * target / measured, 0.1), 10.0)
                    self._factors[name] = factor
                emitted = max(int(round(target * factor)), 1)
            self.last_rates[name] = emitted
            try:
                by_name[name].apply(EnforcementRule(0, self.OBJ_DRL, {"rate": emitted}))
            except (LinkError, RuleError):
                continue
        self.history.append(dict(self.last_rates))


# -- the loop ----------------------------------------------------------------


def run_control_loop(
    policy,
    registry: StageRegistry,
    clock: Clock,
    loop_interval_s: float,
    stop: threading.Event,
    telemetry=None,
    max_iterations: int | None = None,
) -> int:
    """Collect, step, emit, sleep.  Returns the iteration count.

    Dead links are dropped from the registry as they fail; `telemetry`
    is an optional text stream getting one CSV row per stats row."""
    iterations = 0
    if telemetry is not None:
        telemetry.write("timestamp,instance,channel,bytes,ops,throughput\n")
    while not stop.is_set():
        if max_iterations is not None and iterations >= max_iterations:
            break
        snapshot: dict[StageLink, list[StatsRow]] = {}
        for link in registry.links():
            try:
                snapshot[link] = link.collect()
            except LinkError:
                registry.drop(link)
        policy.step(snapshot)
        if telemetry is not None:
            now_s = clock.now_ns() / 1e9
            for link, rows in snapshot.items():
                name = link.info.instance_id
                for row in rows:
                    telemetry.write(
                        f"{now_s:.6f},{name},{row.channel_id},"
                        f"{row.bytes_enforced},{row.ops},{row.throughput_bps:.1f}\n"
                    )
        iterations += 1
        clock.sleep_ns(int(loop_interval_s * 1e9))
    return iterations


# -- socket server -----------------------------------------------------------


class ControlServer:
    """Accepts stage connections and registers a link per stage."""

    def __init__(self, endpoint: str, registry: StageRegistry, policy=None) -> None:
        from .protocol import listen

        self.endpoint = endpoint
        self._registry = registry
        self._policy = policy
        self._listener = listen(endpoint)
        # A blocked accept() outlives listener.close(); poll instead so
        # close() returns promptly.
        self._listener.settimeout(0.25)
        self._closing = threading.Event()
        self._threads: list[threading.Thread] = []
        self._acceptor = threading.Thread(target=self._accept_loop, daemon=True)
        self._acceptor.start()

    def _accept_loop(self) -> None:
        while not self._closing.is_set():
            try:
                sock, _ = self._listener.accept()
            except TimeoutError:
                continue
            except OSError:
                return
            thread = threading.Thread(target=self._attach, args=(sock,), daemon=True)
            thread.start()
            self._threads.append(thread)

    def _attach(self, sock: socket.socket) -> None:
        try:
            link = SocketStageLink(sock)
        except (LinkError, OSError):
            try:
                sock.close()
            except OSError:
                pass
            return
        if self._policy is not None:
            try:
                self._policy.setup(link)
            except (LinkError, RuleError):
                link.close()
                return
        self._registry.add(link)

    def close(self) -> None:
        self._closing.set()
        try:
            self._listener.close()
        except OSError:
            pass
        self._acceptor.join(timeout=5)
        for thread in self._threads:
            thread.join(timeout=5)


# -- policy configuration files ----------------------------------------------


class ConfigError(Exception):
    pass


_SIZE_UNITS = {
    "": 1, "b": 1,
    "kib": 1 << 10, "mib": 1 << 20, "gib": 1 << 30,
    "kb": 10 ** 3, "mb": 10 ** 6, "gb": 10 ** 9,
}


def parse_size(text: str) -> int:
    """Byte count with an optional unit suffix and optional /s:
    "1048576", "8 MiB", "40MiB/s"."""
    body = text.strip()
    if body.lower().endswith("/s"):
        body = body[:-2].rstrip()
    match = re.fullmatch(r"(\d+(?:\.\d+)?)\s*([a-zA-Z]*)", body)
    if match is None:
        raise ValueError(f"bad size {text!r}")
    number, unit = match.groups()
    factor = _SIZE_UNITS.get(unit.lower())
    if factor is None:
        raise ValueError(f"unknown unit {unit!r} in {text!r}")
    value = int(round(float(number) * factor))
    if value <= 0:
        raise ValueError(f"size must be positive, got {text!r}")
    return value


@dataclass(frozen=True)
class PolicySetup:
    """A parsed policy configuration file, ready to instantiate."""

    kind: str  # "tail_latency" | "fair_share"
    socket: str
    loop_interval_s: float
    telemetry_path: str | None
    tail: TailLatencyConfig | None = None
    fair: FairShareConfig | None = None

    def make_policy(self):
        if self.kind == "tail_latency":
            return TailLatencyPolicy(self.tail)
        return FairSharePolicy(self.fair)


def load_policy_config(path: str) -> PolicySetup:
    """Key-value policy file; every diagnostic carries path:line."""
    entries: dict[str, tuple[str, int]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, eq, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not eq or not key or not value:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`")
            if key in entries:
                raise ConfigError(
                    f"{path}:{lineno}: duplicate key {key!r} "
                    f"(first at line {entries[key][1]})"
                )
            entries[key] = (value, lineno)

    def take(key: str, default: str | None = None) -> tuple[str, int] | tuple[None, int]:
        if key in entries:
            return entries.pop(key)
        return default, 0

    def parse(key: str, value: str, lineno: int, fn):
        try:
            return fn(value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {key}: {exc}") from None

    kind, kind_line = take("policy")
    if kind is None:
        raise ConfigError(f"{path}: missing required key `policy`")
    if kind not in ("tail_latency", "fair_share"):
        raise ConfigError(
            f"{path}:{kind_line}: policy must be tail_latency or fair_share, got {kind!r}"
        )
    sock, _ = take("socket")
    if sock is None:
        raise ConfigError(f"{path}: missing required key `socket`")
    interval_raw, interval_line = take("loop_interval_ms", "1000")
    interval_ms = parse("loop_interval_ms", interval_raw, interval_line, int)
    if interval_ms <= 0:
        raise ConfigError(f"{path}:{interval_line}: loop_interval_ms must be positive")
    telemetry, _ = take("telemetry")

    tail = fair = None
    if kind == "tail_latency":
        kvs_raw, kvs_line = take("kvs_bandwidth", "200 MiB")
        min_raw, min_line = take("min_bandwidth", "10 MiB")
        try:
            tail = TailLatencyConfig(
                kvs_bandwidth_bps=parse("kvs_bandwidth", kvs_raw, kvs_line, parse_size),
                min_bandwidth_bps=parse("min_bandwidth", min_raw, min_line, parse_size),
                loop_interval_s=interval_ms / 1000,
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    else:
        max_raw, max_line = take("max_bandwidth", "1 GiB")
        calibrate_raw, calibrate_line = take("calibrate", "off")
        if calibrate_raw not in ("on", "off", "true", "false"):
            raise ConfigError(f"{path}:{calibrate_line}: calibrate must be on or off")
        demands: dict[str, int] = {}
        for key in [k for k in entries if k.startswith("demand.")]:
            value, lineno = entries.pop(key)
            name = key[len("demand."):]
            if not name:
                raise ConfigError(f"{path}:{lineno}: demand key needs an instance name")
            demands[name] = parse(key, value, lineno, parse_size)
        try:
            fair = FairShareConfig(
                max_bandwidth_bps=parse("max_bandwidth", max_raw, max_line, parse_size),
                demands_bps=demands,
                loop_interval_s=interval_ms / 1000,
                calibrate=calibrate_raw in ("on", "true"),
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    if entries:
        key, (_value, lineno) = sorted(entries.items(), key=lambda kv: kv[1][1])[0]
        raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    return PolicySetup(
        kind=kind,
        socket=sock,
        loop_interval_s=interval_ms / 1000,
        telemetry_path=telemetry,
        tail=tail,
        fair=fair,
    )


# -- OS counters -------------------------------------------------------------


@dataclass(frozen=True)
class OsIoCounters:
    read_bytes: int
    write_bytes: int


def read_proc_io(pid: int) -> OsIoCounters:
    """Cumulative I/O byte counters the kernel keeps per process."""
    try:
        with open(f"/proc/{pid}/io", "r", encoding="ascii") as handle:
            text = handle.read()
    except (FileNotFoundError, ProcessLookupError, PermissionError) as exc:
        raise LookupError(f"no I/O counters for pid {pid}: {exc}") from None
    values = {}
    for line in text.splitlines():
        key, colon, raw = line.partition(":")
        if colon and key in ("read_bytes", "write_bytes"):
            values[key] = int(raw.strip())
    if "read_bytes" not in values or "write_bytes" not in values:
        raise LookupError(f"pid {pid} I/O counters incomplete")
    return OsIoCounters(values["read_bytes"], values["write_bytes"])


def read_os_counters(source, requester) -> OsIoCounters:
    """source "os-proc" reads /proc/<pid>/io; a simulated disk exposes the
    same shape through its per-requester counters."""
    if source == "os-proc":
        return read_proc_io(requester)
    if hasattr(source, "counters"):
        read_bytes, write_bytes = source.counters(requester)
        return OsIoCounters(read_bytes, write_bytes)
    raise LookupError(f"unknown counter source {source!r}")
