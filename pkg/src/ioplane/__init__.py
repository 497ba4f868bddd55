"""Software-defined storage data plane, desk sized.

The package splits storage QoS into an embeddable data-plane stage
(intercept, classify, enforce) and a control plane that programs stages
over a small framed protocol.  A virtual-time harness reproduces two
control problems end to end: taming LSM write-stall tail latency, and
max-min fair bandwidth sharing between tenants on one disk.
"""
from .clock import Clock, ManualClock, RealClock
from .stage import Stage, StageConfig, load_rule_file
from .types import (
    Context,
    EnforcementResult,
    EnforcementStatus,
    RequestContext,
    RequestType,
    StageInfo,
    StatsRow,
)
from .vclock import SimulationDeadlock, VirtualClock

__version__ = "0.1.0"

__all__ = [
    "Clock",
    "Context",
    "EnforcementResult",
    "EnforcementStatus",
    "ManualClock",
    "RealClock",
    "RequestContext",
    "RequestType",
    "SimulationDeadlock",
    "Stage",
    "StageConfig",
    "StageInfo",
    "StatsRow",
    "VirtualClock",
    "load_rule_file",
    "__version__",
]
