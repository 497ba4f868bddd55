"""Loopback microbenchmark smoke tests (real clock, real threads).

Absolute throughput numbers are host noise; only shape is asserted.
"""

import pytest

from ioplane.harness.microbench import build_loopback_stage, run_microbench, run_microbench_sweep
from ioplane.types import Context, RequestType


def test_loopback_stage_routes_by_workflow():
    stage = build_loopback_stage(4)
    for wf in range(4):
        result = stage.enforce(Context(wf, request_type=RequestType.READ, request_size=0))
        assert result.ok
        assert result.channel_id == wf + 1
        assert result.object_id == wf + 1


def test_short_zero_byte_run():
    result = run_microbench(channels=1, request_size=0, duration_s=0.05)
    assert result.channels == 1
    assert result.total_ops > 0
    assert result.ops_per_s > 0
    assert result.bytes_per_s == 0
    assert result.p50_ns <= result.p99_ns
    assert result.payload_intact


def test_payload_round_trips_through_enforce():
    result = run_microbench(channels=1, request_size=128 * 1024, duration_s=0.05)
    assert result.payload_intact
    assert result.request_size == 128 * 1024
    assert result.bytes_per_s > 0


def test_multi_channel_run_counts_all_threads():
    result = run_microbench(channels=2, request_size=0, duration_s=0.05)
    assert result.total_ops > 0
    assert result.payload_intact


def test_sweep_returns_one_result_per_count():
    sweep = run_microbench_sweep([1, 2], request_size=0, duration_s=0.02)
    assert [r.channels for r in sweep] == [1, 2]


def test_argument_validation():
    with pytest.raises(ValueError):
        run_microbench(0)
    with pytest.raises(ValueError):
        run_microbench(129)
    with pytest.raises(ValueError):
        run_microbench(1, request_size=-1)
    with pytest.raises(ValueError):
        run_microbench(1, request_size=128 * 1024 + 1)
    with pytest.raises(ValueError):
        run_microbench(1, duration_s=0)
