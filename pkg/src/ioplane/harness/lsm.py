"""LSM key-value-store workflow simulator.

Models the parts of an LSM engine that matter for write stalls: eight
closed-loop clients issuing a 50:50 get/put mix on a peak/valley
schedule, a memtable that freezes when full, a single flush thread that
may only write when the first level is under its file quota, and a FIFO
compaction pool where the level-0 merge is sequential and every level-0
merge may spawn a larger high-level merge.  Client puts stall exactly
when the memtable is full with a flush still busy, or the flush itself
is blocked on the quota; that stall is the latency spike the policy
exists to remove.

In paio mode every simulated file write and read passes through a stage
before reaching the shared disk, and a control loop reallocates
bandwidth between flush and the two compaction classes each interval.
Baseline mode hits the disk directly.  Both run under virtual time with
a fixed seed, so runs are bit-reproducible.

Latency is measured against each operation's intended issue time (the
schedule), so time spent queued behind a stall counts toward the
operation, not silently dropped — without this, stalls would vanish
from the percentiles.
"""
from __future__ import annotations

import random
import threading
from collections import deque
from dataclasses import dataclass, field

from ..clock import Clock
from ..control import (
    LocalStageLink,
    StageRegistry,
    TailLatencyConfig,
    TailLatencyPolicy,
    run_control_loop,
)
from ..stage import Stage, StageConfig
from ..types import Context, RequestContext, RequestType
from ..vclock import VirtualClock
from . import percentile
from .disk import SimDisk
from .iopath import IoPath

MIB = 1 << 20

BASELINE = "baseline"
PAIO = "paio_tail_latency"

_WF_FLUSH = 100
_WF_COMPACT = 200


@dataclass(frozen=True)
class LsmSimConfig:
    seed: int = 1
    scale: float = 1 / 25
    base_memtable_bytes: int = 128 * MIB
    base_disk_bps: int = 200 * MIB
    base_kvs_bandwidth_bps: int = 200 * MIB
    base_min_bandwidth_bps: int = 10 * MIB
    base_peak_ops: float = 20_000.0
    base_valley_ops: float = 5_000.0
    peak_len_s: float = 100.0
    valley_len_s: float = 10.0
    initial_valley_s: float = 300.0
    cycles: int = 2
    client_threads: int = 8
    flush_threads: int = 1
    compaction_threads: int = 7
    l0_file_quota: int = 4
    key_bytes: int = 8
    value_bytes: int = 1024
    get_fraction: float = 0.5
    high_level_p: float = 0.5
    amplification: float = 4.0
    initial_backlog: int = 40
    chunk_bytes: int = 128 * 1024
    loop_interval_s: float = 1.0

    def __post_init__(self) -> None:
        positives = (
            self.scale, self.base_memtable_bytes, self.base_disk_bps,
            self.base_kvs_bandwidth_bps, self.base_min_bandwidth_bps,
            self.base_peak_ops, self.base_valley_ops, self.peak_len_s,
            self.valley_len_s, self.cycles, self.client_threads,
            self.compaction_threads, self.l0_file_quota, self.value_bytes,
            self.amplification, self.chunk_bytes, self.loop_interval_s,
        )
        if any(v <= 0 for v in positives):
            raise ValueError("all sizes, rates, and durations must be positive")
        if self.flush_threads != 1:
            raise ValueError("the flush path is single-threaded by construction")
        if not 0 <= self.get_fraction <= 1 or not 0 <= self.high_level_p <= 1:
            raise ValueError("fractions must lie in [0, 1]")

    @property
    def memtable_bytes(self) -> int:
        return int(self.base_memtable_bytes * self.scale)

    @property
    def disk_bps(self) -> int:
        return int(self.base_disk_bps * self.scale)

    @property
    def kvs_bandwidth_bps(self) -> int:
        return int(self.base_kvs_bandwidth_bps * self.scale)

    @property
    def min_bandwidth_bps(self) -> int:
        return int(self.base_min_bandwidth_bps * self.scale)

    @property
    def peak_ops(self) -> float:
        return self.base_peak_ops * self.scale

    @property
    def valley_ops(self) -> float:
        return self.base_valley_ops * self.scale

    @property
    def entry_bytes(self) -> int:
        return self.key_bytes + self.value_bytes

    @property
    def duration_s(self) -> float:
        return self.initial_valley_s + self.cycles * (self.peak_len_s + self.valley_len_s)

    def rate_at(self, t_s: float) -> float:
        """Target total ops/s at time t."""
        if t_s < self.initial_valley_s:
            return self.valley_ops
        cycle_pos = (t_s - self.initial_valley_s) % (self.peak_len_s + self.valley_len_s)
        return self.peak_ops if cycle_pos < self.peak_len_s else self.valley_ops


@dataclass
class OpRecord:
    intended_ns: int
    kind: str  # "get" | "put"
    latency_ns: int


@dataclass
class LsmRunResult:
    mode: str
    config: LsmSimConfig
    ops: list[OpRecord] = field(default_factory=list)
    events: list[tuple[int, str, str]] = field(default_factory=list)
    flush_count: int = 0
    low_compactions: int = 0
    high_compactions: int = 0
    stall_time_ns: int = 0

    @property
    def latencies_ns(self) -> list[int]:
        return sorted(op.latency_ns for op in self.ops)

    def p(self, fraction: float) -> int:
        return percentile(self.latencies_ns, fraction)

    @property
    def makespan_s(self) -> float:
        """Schedule length plus whatever catch-up tail stalls caused."""
        if not self.ops:
            return self.config.duration_s
        last_done = max(op.intended_ns + op.latency_ns for op in self.ops)
        return max(self.config.duration_s, last_done / 1e9)

    @property
    def mean_ops_per_s(self) -> float:
        return len(self.ops) / self.makespan_s

    def ops_per_second(self) -> dict[int, int]:
        buckets: dict[int, int] = {}
        for op in self.ops:
            second = int((op.intended_ns + op.latency_ns) / 1e9)
            buckets[second] = buckets.get(second, 0) + 1
        return buckets

    def csv_rows(self) -> list[tuple[float, str, str, float]]:
        rows = [(float(sec), "throughput", "ops", float(count))
                for sec, count in sorted(self.ops_per_second().items())]
        for t_ns, name, detail in self.events:
            if name == "stall_begin":
                rows.append((t_ns / 1e9, "stall", detail, 1.0))
            elif name == "stall_end":
                rows.append((t_ns / 1e9, "stall", detail, 0.0))
        rows.append((self.config.duration_s, "latency_p50_ms", self.mode, self.p(0.50) / 1e6))
        rows.append((self.config.duration_s, "latency_p99_ms", self.mode, self.p(0.99) / 1e6))
        rows.append((self.config.duration_s, "mean_kops", self.mode, self.mean_ops_per_s / 1e3))
        return rows


class _LsmWorld:
    """Shared mutable state of one simulated store."""

    def __init__(self, cfg: LsmSimConfig, clock: Clock, io: IoPath, result: LsmRunResult):
        self.cfg = cfg
        self.clock = clock
        self.io = io
        self.result = result
        self.mem_cond = clock.new_condition()
        self.active_bytes = 0
        self.immutable: int | None = None
        self.stalled_clients = 0
        self.stall_began_ns = 0
        self.l0_cond = clock.new_condition()
        self.l0_files: list[int] = []
        self.l0_job_pending = False
        self.flush_blocked = False
        # Low-level (L0->L1) merges never queue behind the high-level
        # backlog: one worker serves low jobs only, the rest serve highs.
        self.comp_cond = clock.new_condition()
        self.low_queue: deque[str] = deque()
        self.high_queue: deque[str] = deque()
        self.spawn_rng = random.Random(cfg.seed * 7919 + 13)
        self.done = False
        self.clients_done = 0
        self.record_lock = threading.Lock()

    def log(self, name: str, detail: str = "") -> None:
        self.result.events.append((self.clock.now_ns(), name, detail))

    # -- client write path -------------------------------------------------

    def put(self) -> None:
        """Inserts one entry; blocks through stalls."""
        cfg = self.cfg
        with self.mem_cond:
            waited = False
            while self.active_bytes >= cfg.memtable_bytes and self.immutable is not None:
                if not waited:
                    waited = True
                    self._stall_enter()
                self.mem_cond.wait_ns(None)
            if waited:
                self._stall_exit()
            self.active_bytes += cfg.entry_bytes
            if self.active_bytes >= cfg.memtable_bytes and self.immutable is None:
                self.immutable = self.active_bytes
                self.active_bytes = 0
                self.log("freeze")
                self.mem_cond.notify_all()

    def _stall_enter(self) -> None:
        self.stalled_clients += 1
        if self.stalled_clients == 1:
            self.stall_began_ns = self.clock.now_ns()
            reason = "flush_blocked_l0" if self.flush_blocked else "memtable_full_flush_busy"
            self.log("stall_begin", reason)

    def _stall_exit(self) -> None:
        self.stalled_clients -= 1
        if self.stalled_clients == 0:
            self.result.stall_time_ns += self.clock.now_ns() - self.stall_began_ns
            self.log("stall_end")

    # -- background actors -------------------------------------------------

    def flusher(self) -> None:
        cfg = self.cfg
        while True:
            with self.mem_cond:
                while self.immutable is None and not self.done:
                    self.mem_cond.wait_ns(None)
                if self.immutable is None:
                    return
                size = self.immutable
            with self.l0_cond:
                if len(self.l0_files) >= cfg.l0_file_quota:
                    self.flush_blocked = True
                    self.log("flush_blocked_begin")
                    while len(self.l0_files) >= cfg.l0_file_quota and not self.done:
                        self.l0_cond.wait_ns(None)
                    self.flush_blocked = False
                    self.log("flush_blocked_end")
                    if len(self.l0_files) >= cfg.l0_file_quota:
                        return
            self.io.write(
                ("flush",),
                Context(workflow_id=_WF_FLUSH,
                        request_context=RequestContext.BG_FLUSH),
                size,
            )
            self.result.flush_count += 1
            self.log("flush_done")
            with self.l0_cond:
                self.l0_files.append(size)
                self._maybe_queue_low_locked()
            with self.mem_cond:
                self.immutable = None
                self.log("immutable_clear")
                self.mem_cond.notify_all()

    def _maybe_queue_low_locked(self) -> None:
        if len(self.l0_files) >= self.cfg.l0_file_quota and not self.l0_job_pending:
            self.l0_job_pending = True
            with self.comp_cond:
                self.low_queue.append("low")
                self.comp_cond.notify_all()

    def low_compaction_worker(self, index: int) -> None:
        cfg = self.cfg
        while True:
            with self.comp_cond:
                while not self.low_queue and not self.done:
                    self.comp_cond.wait_ns(None)
                if not self.low_queue:
                    return
                self.low_queue.popleft()
            with self.l0_cond:
                input_bytes = sum(self.l0_files)
            size = max(int(input_bytes * cfg.amplification), 1)
            self.io.write(
                ("compact", index),
                Context(workflow_id=_WF_COMPACT + index,
                        request_context=RequestContext.BG_COMPACTION_L0_L1),
                size,
            )
            self.result.low_compactions += 1
            self.log("low_compaction_done")
            with self.l0_cond:
                self.l0_files.clear()
                self.l0_job_pending = False
                self.l0_cond.notify_all()
            if self.spawn_rng.random() < cfg.high_level_p:
                with self.comp_cond:
                    self.high_queue.append("high")
                    self.comp_cond.notify_all()

    def high_compaction_worker(self, index: int) -> None:
        cfg = self.cfg
        size = max(int(cfg.memtable_bytes * cfg.l0_file_quota * cfg.amplification), 1)
        while True:
            with self.comp_cond:
                while not self.high_queue and not self.done:
                    self.comp_cond.wait_ns(None)
                if self.done:
                    return
                self.high_queue.popleft()
            self.io.write(
                ("compact", index),
                Context(workflow_id=_WF_COMPACT + index,
                        request_context=RequestContext.BG_COMPACTION_HIGH),
                size,
            )
            self.result.high_compactions += 1
            self.log("high_compaction_done")

    def client(self, index: int) -> None:
        cfg = self.cfg
        rng = random.Random(cfg.seed * 1009 + index)
        duration_ns = int(cfg.duration_s * 1e9)
        intended_ns = 0
        while True:
            rate = cfg.rate_at(intended_ns / 1e9) / cfg.client_threads
            intended_ns += int(1e9 / rate)
            if intended_ns >= duration_ns:
                self.client_finished()
                return
            now = self.clock.now_ns()
            if now < intended_ns:
                self.clock.sleep_ns(intended_ns - now)
            if rng.random() < cfg.get_fraction:
                self.io.read(
                    ("client", index),
                    Context(workflow_id=index,
                            request_type=RequestType.GET,
                            request_context=RequestContext.FOREGROUND),
                    cfg.value_bytes,
                )
                kind = "get"
            else:
                self.put()
                kind = "put"
            done_ns = self.clock.now_ns()
            with self.record_lock:
                self.result.ops.append(OpRecord(intended_ns, kind, done_ns - intended_ns))

    def client_finished(self) -> None:
        with self.mem_cond:
            self.clients_done += 1
            self.mem_cond.notify_all()

    def wait_clients(self) -> None:
        with self.mem_cond:
            while self.clients_done < self.cfg.client_threads:
                self.mem_cond.wait_ns(None)

    def shut_down(self) -> None:
        with self.mem_cond:
            self.done = True
            self.mem_cond.notify_all()
        with self.l0_cond:
            self.l0_cond.notify_all()
        with self.comp_cond:
            self.comp_cond.notify_all()


def run_lsm_experiment(cfg: LsmSimConfig, mode: str, telemetry=None) -> LsmRunResult:
    if mode not in (BASELINE, PAIO):
        raise ValueError(f"unknown mode {mode!r}")
    clock = VirtualClock()
    disk = SimDisk(clock, cfg.disk_bps)
    result = LsmRunResult(mode=mode, config=cfg)

    stage = None
    registry = None
    stop = threading.Event()
    if mode == PAIO:
        stage = Stage(
            StageConfig(
                name="lsm",
                workflow_count=cfg.client_threads + 1 + cfg.compaction_threads,
            ),
            clock=clock,
        )
        policy = TailLatencyPolicy(
            TailLatencyConfig(
                kvs_bandwidth_bps=cfg.kvs_bandwidth_bps,
                min_bandwidth_bps=cfg.min_bandwidth_bps,
                loop_interval_s=cfg.loop_interval_s,
            )
        )
        link = LocalStageLink(stage)
        policy.setup(link)
        registry = StageRegistry()
        registry.add(link)

    io = IoPath(disk, stage, cfg.chunk_bytes)
    world = _LsmWorld(cfg, clock, io, result)
    for _ in range(cfg.initial_backlog):
        world.high_queue.append("high")

    for i in range(cfg.client_threads):
        clock.spawn(world.client, i, name=f"client-{i}")
    clock.spawn(world.flusher, name="flusher")
    clock.spawn(world.low_compaction_worker, 0, name="compact-low")
    for j in range(1, cfg.compaction_threads):
        clock.spawn(world.high_compaction_worker, j, name=f"compact-{j}")
    if mode == PAIO:
        clock.spawn(
            run_control_loop,
            policy,
            registry,
            clock,
            cfg.loop_interval_s,
            stop,
            telemetry,
            name="control-loop",
        )

    def orchestrator() -> None:
        world.wait_clients()
        world.shut_down()
        stop.set()

    clock.spawn(orchestrator, name="orchestrator")
    clock.run()
    return result
