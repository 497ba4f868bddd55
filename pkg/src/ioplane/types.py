"""Core vocabulary shared by the data plane and control plane.

A request entering the stage is described by a Context: who issued it
(workflow id), what it is (request type), how big it is, and which
internal activity of the host system produced it (request context).
Request size is deliberately not a classifier; it feeds enforcement
cost, never routing.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass


class RequestType(enum.IntEnum):
    NO_OP = 0
    READ = 1
    WRITE = 2
    OPEN = 3
    CLOSE = 4
    PUT = 5
    GET = 6


class RequestContext(enum.IntEnum):
    """Well-known host activities.  Embedders may pass any int >= CUSTOM_BASE
    for activities this enum does not name."""

    NONE = 0
    FOREGROUND = 1
    BG_FLUSH = 2
    BG_COMPACTION_L0_L1 = 3
    BG_COMPACTION_HIGH = 4
    BACKGROUND_GENERIC = 5

    CUSTOM_BASE = 64


@dataclass(frozen=True)
class Context:
    """Classifier set attached to one request."""

    workflow_id: int
    request_type: int = RequestType.NO_OP
    request_size: int = 0
    request_context: int = RequestContext.NONE

    def __post_init__(self) -> None:
        if self.workflow_id < 0:
            raise ValueError("workflow_id must be >= 0")
        if self.request_size < 0:
            raise ValueError("request_size must be >= 0")
        if self.request_type < 0 or self.request_context < 0:
            raise ValueError("classifier values must be >= 0")


class EnforcementStatus(enum.Enum):
    OK = "ok"
    ROUTING_ERROR = "routing_error"
    ENFORCEMENT_ERROR = "enforcement_error"


@dataclass(frozen=True)
class EnforcementResult:
    """Outcome of pushing one request through the stage.

    status OK means the request may proceed.  wait_ns is the delay
    enforcement imposed on the caller; payload is the request body handed
    back unchanged (enforcement never rewrites bytes today, but carrying
    it keeps the call shape stable if an object ever does).
    """

    status: EnforcementStatus
    allowed_size: int
    wait_ns: int = 0
    payload: bytes | None = None
    channel_id: int | None = None
    object_id: int | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status is EnforcementStatus.OK


@dataclass(frozen=True)
class StatsRow:
    """One collection window for one (channel, workflow, context) cell.

    throughput_bps is bytes over the window scaled to one second; a
    zero-length window reports 0.0.
    """

    channel_id: int
    workflow_id: int
    request_context: int
    bytes_enforced: int
    ops: int
    window_ns: int
    throughput_bps: float


@dataclass(frozen=True)
class StageInfo:
    """Identity a stage reports during the control handshake."""

    name: str
    instance_id: str
    pid: int
    workflow_count: int


class StageError(Exception):
    """Base for all stage-side failures."""


class RuleError(StageError):
    """A control rule was rejected; the message says which field and why."""


class RoutingError(StageError):
    pass


class EnforcementError(StageError):
    pass
