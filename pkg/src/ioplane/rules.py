"""Rules the control plane sends to a stage.

Three families, mirroring the three control calls that mutate a stage:
housekeeping rules build or tear down channels and enforcement objects,
differentiation rules shape the routing table, enforcement rules
reconfigure a live object.  Every rule carries a rule id assigned by the
sender; a stage applies rules one at a time in arrival order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .routing import ClassifierMask, ClassifierValues

ObjectState = dict[str, Union[int, float]]


# -- housekeeping ------------------------------------------------------------


@dataclass(frozen=True)
class CreateChannel:
    channel_id: int


@dataclass(frozen=True)
class CreateObject:
    channel_id: int
    object_id: int
    kind: str  # "noop" | "drl"
    state: ObjectState = field(default_factory=dict)


@dataclass(frozen=True)
class RemoveObject:
    channel_id: int
    object_id: int


@dataclass(frozen=True)
class RemoveChannel:
    channel_id: int


HousekeepingOp = Union[CreateChannel, CreateObject, RemoveObject, RemoveChannel]


@dataclass(frozen=True)
class HousekeepingRule:
    rule_id: int
    op: HousekeepingOp


# -- differentiation ---------------------------------------------------------


@dataclass(frozen=True)
class SetMask:
    mask: ClassifierMask


@dataclass(frozen=True)
class BindChannel:
    classifiers: ClassifierValues
    channel_id: int


@dataclass(frozen=True)
class BindObject:
    """Maps classifiers to an object within a channel.  An empty
    classifier set declares the channel's default object instead."""

    channel_id: int
    classifiers: ClassifierValues
    object_id: int


@dataclass(frozen=True)
class SetDefaultChannel:
    channel_id: int


DifferentiationOp = Union[SetMask, BindChannel, BindObject, SetDefaultChannel]


@dataclass(frozen=True)
class DifferentiationRule:
    rule_id: int
    op: DifferentiationOp


# -- enforcement -------------------------------------------------------------


@dataclass(frozen=True)
class EnforcementRule:
    """Reconfigures one live object.  Object ids are unique across the
    whole stage, so the channel need not be named."""

    rule_id: int
    object_id: int
    state: ObjectState


Rule = Union[HousekeepingRule, DifferentiationRule, EnforcementRule]
