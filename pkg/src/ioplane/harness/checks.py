"""Pass/fail assertions over finished experiment runs.

Each check returns CheckOutcome rows instead of raising, so the CLI can
print every verdict and exit nonzero on any failure, and the test suite
can assert on the same outcomes.  Thresholds live here, in one place.
"""
from __future__ import annotations

from dataclasses import dataclass

from .lsm import LsmRunResult
from .microbench import MicrobenchResult
from .tenants import TenantRunResult

MIB = 1 << 20

DEMAND_SLACK = 0.95          # per-tenant mean ≥ demand − 5%
BUDGET_SLACK = 1.05          # aggregate per phase ≤ budget + 5%
DEPARTURE_RISE_INTERVALS = 2
STATIC_GAP = 1.25            # static completion ≥ 1.25 × paio completion
P99_RATIO = 0.5              # paio p99 ≤ half of baseline p99
THROUGHPUT_BAND = 0.10       # paio mean ops within ±10% of baseline


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def check_tenant_fairness(result: TenantRunResult) -> list[CheckOutcome]:
    cfg = result.config
    outcomes = []

    for spec in cfg.tenants:
        demand = cfg.demand_bps(spec)
        mean = result.mean_bandwidth_bps(spec.name)
        outcomes.append(CheckOutcome(
            f"fairness.demand.{spec.name}",
            mean >= demand * DEMAND_SLACK,
            f"mean {mean / MIB:.2f} MiB/s vs demand {demand / MIB:.2f} MiB/s",
        ))

    # Aggregate bandwidth per phase (between consecutive arrival or
    # departure markers).  Phase means absorb the one-interval lag while
    # the loop notices an arrival; instantaneous sums during that lag
    # legitimately overshoot.
    markers = sorted(
        t_s for t_s, kind, _name in result.events if kind in ("arrival", "departure")
    )
    samples = result.sampled_sums_bps()
    budget = cfg.max_bandwidth_bps * BUDGET_SLACK
    worst = 0.0
    for begin, end in zip(markers, markers[1:]):
        in_phase = [bps for t_s, bps in samples if begin < t_s <= end]
        if in_phase:
            worst = max(worst, sum(in_phase) / len(in_phase))
    outcomes.append(CheckOutcome(
        "fairness.budget",
        worst <= budget,
        f"worst phase mean {worst / MIB:.2f} MiB/s vs cap {budget / MIB:.2f} MiB/s",
    ))

    outcomes.append(_departure_rise(result))
    return outcomes


def _departure_rise(result: TenantRunResult) -> CheckOutcome:
    history = result.rate_history
    failures = []
    seen_departures = 0
    for k in range(1, len(history)):
        gone = set(history[k - 1]) - set(history[k])
        if not gone or not history[k]:
            continue
        seen_departures += 1
        for name, rate in history[k].items():
            if name in history[k - 1] and rate <= history[k - 1][name]:
                failures.append(f"{name} at step {k}")
    if seen_departures == 0:
        return CheckOutcome("fairness.departure_rise", False, "no departure observed")
    detail = f"{seen_departures} departures, rates rise at the drop step"
    if failures:
        detail = "no rise for " + ", ".join(failures)
    return CheckOutcome("fairness.departure_rise", not failures, detail)


def check_tenant_phases(result: TenantRunResult) -> CheckOutcome:
    """n staggered arrivals and n departures bound 2n−1 phases."""
    markers = [e for e in result.events if e[1] in ("arrival", "departure")]
    expected = 2 * len(result.config.tenants) - 1
    phases = len(markers) - 1
    return CheckOutcome(
        "fairness.phases",
        phases == expected,
        f"{len(markers)} markers bounding {phases} phases (want {expected})",
    )


def check_tenant_static_contrast(
    static: TenantRunResult, paio: TenantRunResult
) -> CheckOutcome:
    name = static.config.tenants[0].name
    static_span = static.active_span_s(name)
    paio_span = paio.active_span_s(name)
    ratio = static_span / paio_span
    return CheckOutcome(
        "static_contrast.completion",
        ratio >= STATIC_GAP,
        f"{name} static {static_span:.0f} s vs paio {paio_span:.0f} s ({ratio:.2f}x)",
    )


def check_lsm_improvement(
    baseline: LsmRunResult, paio: LsmRunResult
) -> list[CheckOutcome]:
    base_p99 = baseline.p(0.99)
    paio_p99 = paio.p(0.99)
    outcomes = [CheckOutcome(
        "tail_latency.p99",
        paio_p99 <= base_p99 * P99_RATIO,
        f"baseline p99 {base_p99 / 1e6:.1f} ms vs paio {paio_p99 / 1e6:.1f} ms",
    )]
    base_tp = baseline.mean_ops_per_s
    paio_tp = paio.mean_ops_per_s
    drift = abs(paio_tp - base_tp) / base_tp if base_tp else 1.0
    outcomes.append(CheckOutcome(
        "tail_latency.throughput",
        drift <= THROUGHPUT_BAND,
        f"baseline {base_tp:.0f} ops/s vs paio {paio_tp:.0f} ops/s ({drift * 100:.1f}% apart)",
    ))
    return outcomes


def check_lsm_stall_invariant(result: LsmRunResult) -> CheckOutcome:
    """Stalls happen only while a frozen memtable is pending (which covers
    flush-blocked-on-quota) — reconstructed from the event log."""
    horizon = float("inf")
    busy: list[tuple[float, float]] = []
    open_at = None
    for t_ns, name, _detail in result.events:
        if name == "freeze" and open_at is None:
            open_at = t_ns
        elif name == "immutable_clear" and open_at is not None:
            busy.append((open_at, t_ns))
            open_at = None
    if open_at is not None:
        busy.append((open_at, horizon))

    stalls: list[tuple[float, float]] = []
    stall_open = None
    for t_ns, name, _detail in result.events:
        if name == "stall_begin" and stall_open is None:
            stall_open = t_ns
        elif name == "stall_end" and stall_open is not None:
            stalls.append((stall_open, t_ns))
            stall_open = None
    if stall_open is not None:
        stalls.append((stall_open, horizon))

    orphans = [
        (begin, end)
        for begin, end in stalls
        if not any(b <= begin and end <= e for b, e in busy)
    ]
    detail = f"{len(stalls)} stall intervals, all inside frozen-memtable windows"
    if orphans:
        detail = f"{len(orphans)} stall intervals outside any frozen-memtable window"
    return CheckOutcome("lsm.stall_invariant", not orphans, detail)


def check_microbench(
    sweep: list[MicrobenchResult], payload_run: MicrobenchResult
) -> list[CheckOutcome]:
    """`sweep` is ascending channel counts at 0 B; `payload_run` carries a
    non-empty payload.  Throughput must not drop as channels are added
    (5% measurement-noise allowance: this one runs on the real clock)."""
    outcomes = []
    ok = True
    for prev, cur in zip(sweep, sweep[1:]):
        if cur.ops_per_s < prev.ops_per_s * 0.95:
            ok = False
    series = ", ".join(f"{r.channels}ch={r.ops_per_s / 1e3:.0f}k" for r in sweep)
    outcomes.append(CheckOutcome("microbench.monotonic", ok, series))
    outcomes.append(CheckOutcome(
        "microbench.payload",
        payload_run.payload_intact and payload_run.request_size > 0,
        f"{payload_run.request_size} B payload returned intact",
    ))
    return outcomes
