"""Multi-tenant bandwidth fairness simulator.

Four key-value instances share one disk.  Each arrives on a schedule,
greedily reads a fixed dataset, and departs.  Three modes:

* baseline: instances hit the disk directly and get whatever the disk's
  processor sharing gives them, demands ignored.
* static_limit: each instance carries its own stage with one rate
  limiter fixed at its demand.  Rules are applied once at arrival; no
  control loop runs, so bandwidth freed by a departure is never handed
  back.
* paio_fair_share: same per-instance stages, plus a control loop that
  recomputes the max-min fair allocation every interval.  Surplus flows
  to whoever is still around, so the tail instance finishes much earlier
  than under static limits.

All modes run under virtual time on a seeded schedule; results are
reproducible bit for bit.  Demands and dataset sizes are stored at full
scale and multiplied down by the scale factor; arrival times stay as
they are, which keeps the phase timeline identical at every scale.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

from ..control import (
    FairShareConfig,
    FairSharePolicy,
    LocalStageLink,
    StageRegistry,
    run_control_loop,
)
from ..stage import Stage, StageConfig
from ..types import Context
from ..vclock import VirtualClock
from .disk import SimDisk
from .iopath import IoPath

MIB = 1 << 20

BASELINE = "baseline"
STATIC = "static_limit"
PAIO = "paio_fair_share"

MODES = (BASELINE, STATIC, PAIO)


@dataclass(frozen=True)
class TenantSpec:
    name: str
    base_demand_bps: int
    base_dataset_bytes: int  # one epoch's worth of reads
    epoch_count: int
    arrival_s: float


DEFAULT_TENANTS = (
    TenantSpec("tenant1", 150 * MIB, 15_000 * MIB, 6, 0.0),
    TenantSpec("tenant2", 200 * MIB, 7_500 * MIB, 5, 30.0),
    TenantSpec("tenant3", 300 * MIB, 10_500 * MIB, 5, 60.0),
    TenantSpec("tenant4", 350 * MIB, 11_875 * MIB, 4, 90.0),
)


@dataclass(frozen=True)
class TenantSimConfig:
    seed: int = 1
    scale: float = 1 / 25
    base_max_bandwidth_bps: int = 1000 * MIB
    base_disk_bps: int = 1200 * MIB
    tenants: tuple[TenantSpec, ...] = DEFAULT_TENANTS
    chunk_bytes: int = MIB
    loop_interval_s: float = 1.0
    calibrate: bool = False

    def __post_init__(self) -> None:
        if self.scale <= 0 or self.chunk_bytes <= 0 or self.loop_interval_s <= 0:
            raise ValueError("scale, chunk size, and loop interval must be positive")
        if not 1 <= len(self.tenants) <= 4:
            raise ValueError("between one and four instances")
        names = [spec.name for spec in self.tenants]
        if len(set(names)) != len(names):
            raise ValueError("tenant names must be unique")
        for spec in self.tenants:
            if spec.base_demand_bps <= 0 or spec.base_dataset_bytes <= 0:
                raise ValueError(f"{spec.name}: demand and dataset must be positive")
            if spec.epoch_count <= 0 or spec.arrival_s < 0:
                raise ValueError(f"{spec.name}: bad epoch count or arrival time")

    @property
    def max_bandwidth_bps(self) -> int:
        return int(self.base_max_bandwidth_bps * self.scale)

    @property
    def disk_bps(self) -> int:
        return int(self.base_disk_bps * self.scale)

    def demand_bps(self, spec: TenantSpec) -> int:
        return int(spec.base_demand_bps * self.scale)

    def dataset_bytes(self, spec: TenantSpec) -> int:
        return int(spec.base_dataset_bytes * self.scale)

    def total_bytes(self, spec: TenantSpec) -> int:
        return self.dataset_bytes(spec) * spec.epoch_count

    def demands(self) -> dict[str, int]:
        return {spec.name: self.demand_bps(spec) for spec in self.tenants}


@dataclass
class TenantRunResult:
    mode: str
    config: TenantSimConfig
    arrivals_s: dict[str, float] = field(default_factory=dict)
    completions_s: dict[str, float] = field(default_factory=dict)
    # (t_s, tenant, bytes moved during the preceding sample interval)
    bandwidth_samples: list[tuple[float, str, int]] = field(default_factory=list)
    rate_history: list[dict[str, int]] = field(default_factory=list)
    events: list[tuple[float, str, str]] = field(default_factory=list)

    def active_span_s(self, name: str) -> float:
        return self.completions_s[name] - self.arrivals_s[name]

    def mean_bandwidth_bps(self, name: str) -> float:
        spec = next(s for s in self.config.tenants if s.name == name)
        return self.config.total_bytes(spec) / self.active_span_s(name)

    def sampled_sums_bps(self) -> list[tuple[float, float]]:
        """Aggregate bandwidth per sample instant, all tenants together."""
        totals: dict[float, int] = {}
        for t_s, _name, delta in self.bandwidth_samples:
            totals[t_s] = totals.get(t_s, 0) + delta
        return [(t, total / 1.0) for t, total in sorted(totals.items())]

    def csv_rows(self) -> list[tuple[float, str, str, float]]:
        rows = [
            (t_s, "bandwidth_mibs", name, delta / MIB)
            for t_s, name, delta in self.bandwidth_samples
        ]
        for t_s, kind, name in self.events:
            rows.append((t_s, kind, name, 1.0))
        for name in sorted(self.completions_s):
            rows.append((self.completions_s[name], "completion_s", name,
                         self.completions_s[name]))
        return rows


class _TenantWorld:
    def __init__(self, cfg: TenantSimConfig, clock: VirtualClock, disk: SimDisk,
                 result: TenantRunResult, policy: FairSharePolicy | None,
                 registry: StageRegistry | None):
        self.cfg = cfg
        self.clock = clock
        self.disk = disk
        self.result = result
        self.policy = policy
        self.registry = registry
        self.done_cond = clock.new_condition()
        self.done_count = 0

    def tenant(self, index: int, spec: TenantSpec) -> None:
        cfg = self.cfg
        clock = self.clock
        if spec.arrival_s > 0:
            clock.sleep_ns(int(spec.arrival_s * 1e9))
        now_s = clock.now_ns() / 1e9
        self.result.arrivals_s[spec.name] = now_s
        self.result.events.append((now_s, "arrival", spec.name))

        stage = None
        if self.policy is not None:
            stage = Stage(StageConfig(name=spec.name, workflow_count=1), clock=clock)
            link = LocalStageLink(stage)
            self.policy.setup(link)
            if self.registry is not None:
                self.registry.add(link)
        io = IoPath(self.disk, stage, cfg.chunk_bytes)

        ctx = Context(workflow_id=index)
        for epoch in range(spec.epoch_count):
            remaining = cfg.dataset_bytes(spec)
            while remaining > 0:
                size = min(cfg.chunk_bytes, remaining)
                io.read((spec.name,), ctx, size)
                remaining -= size
            if epoch + 1 < spec.epoch_count:
                self.result.events.append(
                    (clock.now_ns() / 1e9, "epoch", f"{spec.name}:{epoch + 1}")
                )

        done_s = clock.now_ns() / 1e9
        self.result.completions_s[spec.name] = done_s
        self.result.events.append((done_s, "departure", spec.name))
        if stage is not None:
            stage.close()
        with self.done_cond:
            self.done_count += 1
            self.done_cond.notify_all()

    def sampler(self) -> None:
        cfg = self.cfg
        previous = {spec.name: 0 for spec in cfg.tenants}
        while True:
            with self.done_cond:
                if self.done_count >= len(cfg.tenants):
                    return
            self.clock.sleep_ns(int(1e9))
            t_s = self.clock.now_ns() / 1e9
            for spec in cfg.tenants:
                read_bytes, _ = self.disk.counters((spec.name,))
                delta = read_bytes - previous[spec.name]
                previous[spec.name] = read_bytes
                if delta:
                    self.result.bandwidth_samples.append((t_s, spec.name, delta))


def run_tenant_experiment(cfg: TenantSimConfig, mode: str, telemetry=None) -> TenantRunResult:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    clock = VirtualClock()
    disk = SimDisk(clock, cfg.disk_bps)
    result = TenantRunResult(mode=mode, config=cfg)

    policy = None
    registry = None
    stop = threading.Event()
    if mode in (STATIC, PAIO):
        policy = FairSharePolicy(
            FairShareConfig(
                max_bandwidth_bps=cfg.max_bandwidth_bps,
                demands_bps=cfg.demands(),
                loop_interval_s=cfg.loop_interval_s,
                calibrate=cfg.calibrate,
            )
        )
    if mode == PAIO:
        registry = StageRegistry()

    world = _TenantWorld(cfg, clock, disk, result, policy, registry)
    for index, spec in enumerate(cfg.tenants):
        clock.spawn(world.tenant, index, spec, name=spec.name)
    clock.spawn(world.sampler, name="sampler")
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

        def watchdog() -> None:
            with world.done_cond:
                while world.done_count < len(cfg.tenants):
                    world.done_cond.wait_ns(None)
            stop.set()

        clock.spawn(watchdog, name="watchdog")

    clock.run()
    if policy is not None:
        result.rate_history = list(policy.history)
    return result
