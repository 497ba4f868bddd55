"""Request context and result types."""

import pytest

from ioplane.types import (
    Context,
    EnforcementError,
    EnforcementResult,
    EnforcementStatus,
    RequestContext,
    RequestType,
    RoutingError,
    RuleError,
    StageError,
    StatsRow,
)


def test_context_defaults():
    ctx = Context(3)
    assert ctx.workflow_id == 3
    assert ctx.request_type == RequestType.NO_OP
    assert ctx.request_context == RequestContext.NONE
    assert ctx.request_size == 0


def test_context_rejects_negative_fields():
    with pytest.raises(ValueError):
        Context(-1)
    with pytest.raises(ValueError):
        Context(0, request_size=-4)


def test_enum_values_are_stable():
    assert RequestType.NO_OP == 0
    assert RequestType.READ == 1
    assert RequestType.WRITE == 2
    assert RequestType.OPEN == 3
    assert RequestType.CLOSE == 4
    assert RequestType.PUT == 5
    assert RequestType.GET == 6

    assert RequestContext.NONE == 0
    assert RequestContext.FOREGROUND == 1
    assert RequestContext.BG_FLUSH == 2
    assert RequestContext.BG_COMPACTION_L0_L1 == 3
    assert RequestContext.BG_COMPACTION_HIGH == 4
    assert RequestContext.BACKGROUND_GENERIC == 5
    assert RequestContext.CUSTOM_BASE == 64


def test_enforcement_result_ok_flag():
    ok = EnforcementResult(status=EnforcementStatus.OK, allowed_size=10)
    err = EnforcementResult(status=EnforcementStatus.ROUTING_ERROR, allowed_size=0)
    assert ok.ok and not err.ok


def test_error_hierarchy():
    for exc in (RuleError, RoutingError, EnforcementError):
        assert issubclass(exc, StageError)


def test_stats_row_fields():
    row = StatsRow(
        channel_id=1,
        workflow_id=2,
        request_context=3,
        bytes_enforced=4096,
        ops=4,
        window_ns=1_000_000_000,
        throughput_bps=4096.0,
    )
    assert row.ops == 4
    assert row.throughput_bps == pytest.approx(4096.0)
