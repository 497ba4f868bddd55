"""Loopback stage microbenchmark.

Stresses enforce() with no disk behind it: one real thread per channel
submits closed-loop requests routed to a Noop object, and the run
reports cumulative throughput plus per-call latency percentiles.  This
is the one harness piece on real threads and the real clock; absolute
numbers depend entirely on the host (and on the interpreter's ability
to run threads in parallel), so tests only check shape: more channels
never hurt cumulative throughput up to the core count, and the payload
comes back untouched.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

from ..clock import RealClock
from ..rules import (
    BindChannel,
    CreateChannel,
    CreateObject,
    DifferentiationRule,
    HousekeepingRule,
    SetMask,
)
from ..routing import ClassifierMask, ClassifierValues
from ..stage import Stage, StageConfig
from ..types import Context, RequestType
from . import percentile

_LATENCY_SAMPLE_EVERY = 64


@dataclass(frozen=True)
class MicrobenchResult:
    channels: int
    request_size: int
    duration_s: float
    total_ops: int
    ops_per_s: float
    bytes_per_s: float
    p50_ns: int
    p99_ns: int
    payload_intact: bool


def build_loopback_stage(channels: int) -> Stage:
    """One channel per workflow, each with its own Noop."""
    stage = Stage(StageConfig(name="loopback", workflow_count=channels))
    rule_seq = 0

    def apply(rule_cls, op):
        nonlocal rule_seq
        rule_seq += 1
        stage.apply_rule(rule_cls(rule_seq, op))

    apply(DifferentiationRule, SetMask(ClassifierMask(workflow_id=True)))
    for index in range(channels):
        channel_id = index + 1
        apply(HousekeepingRule, CreateChannel(channel_id))
        apply(HousekeepingRule, CreateObject(channel_id, channel_id, "noop"))
        apply(DifferentiationRule,
              BindChannel(ClassifierValues(workflow_id=index), channel_id))
    return stage


def run_microbench(
    channels: int, request_size: int = 0, duration_s: float = 1.0
) -> MicrobenchResult:
    if not 1 <= channels <= 128:
        raise ValueError("channels must be in 1..128")
    if not 0 <= request_size <= 128 * 1024:
        raise ValueError("request size must be in 0..128 KiB")
    if duration_s <= 0:
        raise ValueError("duration must be positive")

    stage = build_loopback_stage(channels)
    clock = RealClock()
    payload = bytes(request_size)
    counts = [0] * channels
    samples: list[list[int]] = [[] for _ in range(channels)]
    intact = [True] * channels
    start_gate = threading.Event()
    deadline = [0]

    def client(index: int) -> None:
        ctx = Context(
            workflow_id=index,
            request_type=RequestType.READ,
            request_size=request_size,
        )
        ops = 0
        my_samples = samples[index]
        start_gate.wait()
        end = deadline[0]
        while True:
            before = clock.now_ns()
            if before >= end:
                break
            result = stage.enforce(ctx, payload)
            if ops % _LATENCY_SAMPLE_EVERY == 0:
                my_samples.append(clock.now_ns() - before)
                if not (result.ok and result.payload == payload):
                    intact[index] = False
            ops += 1
        counts[index] = ops

    threads = [
        threading.Thread(target=client, args=(i,), name=f"bench-{i}")
        for i in range(channels)
    ]
    for thread in threads:
        thread.start()
    start_ns = clock.now_ns()
    deadline[0] = start_ns + int(duration_s * 1e9)
    start_gate.set()
    for thread in threads:
        thread.join()
    elapsed_s = max((clock.now_ns() - start_ns) / 1e9, 1e-9)

    total_ops = sum(counts)
    merged = sorted(lat for per_channel in samples for lat in per_channel)
    return MicrobenchResult(
        channels=channels,
        request_size=request_size,
        duration_s=elapsed_s,
        total_ops=total_ops,
        ops_per_s=total_ops / elapsed_s,
        bytes_per_s=total_ops * request_size / elapsed_s,
        p50_ns=percentile(merged, 0.50) if merged else 0,
        p99_ns=percentile(merged, 0.99) if merged else 0,
        payload_intact=all(intact),
    )


def run_microbench_sweep(
    channel_counts: list[int], request_size: int = 0, duration_s: float = 1.0
) -> list[MicrobenchResult]:
    return [run_microbench(k, request_size, duration_s) for k in channel_counts]
