"""Request differentiation.

Routing happens in two phases.  Phase one reduces a request's classifier
values to a 32-bit token under the active classifier mask and looks the
token up in the channel map.  Phase two picks an enforcement object
inside the channel: a channel with a single object needs no lookup, a
multi-object channel consults its token-keyed object map, falling back
to the channel's declared default object if one exists.

Tokens come from MurmurHash3 (x86, 32-bit, seed 0) over the selected
classifier values, each packed as a little-endian u64 in a fixed order:
workflow id, then request type, then request context.  Classifiers
outside the mask contribute no bytes at all, so the same values hashed
under different masks produce different tokens on purpose.

The hash is written out here rather than imported; the bindings on PyPI
hash the C implementation's signed output through a different ABI per
platform, and the token values are part of this package's on-the-wire
contract, so they must not drift.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .types import Context, RoutingError

_MASK32 = 0xFFFFFFFF


def murmur3_32(data: bytes, seed: int = 0) -> int:
    """MurmurHash3 x86 32-bit; returns an unsigned 32-bit int."""
    c1 = 0xCC9E2D51
    c2 = 0x1B873593
    h = seed & _MASK32
    n = len(data)
    full = n & ~3
    for i in range(0, full, 4):
        k = int.from_bytes(data[i : i + 4], "little")
        k = (k * c1) & _MASK32
        k = ((k << 15) | (k >> 17)) & _MASK32
        k = (k * c2) & _MASK32
        h ^= k
        h = ((h << 13) | (h >> 19)) & _MASK32
        h = (h * 5 + 0xE6546B64) & _MASK32
    rem = n & 3
    k = 0
    if rem == 3:
        k ^= data[full + 2] << 16
    if rem >= 2:
        k ^= data[full + 1] << 8
    if rem >= 1:
        k ^= data[full]
        k = (k * c1) & _MASK32
        k = ((k << 15) | (k >> 17)) & _MASK32
        k = (k * c2) & _MASK32
        h ^= k
    h ^= n
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & _MASK32
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & _MASK32
    h ^= h >> 16
    return h


@dataclass(frozen=True)
class ClassifierMask:
    """Which classifiers participate in routing."""

    workflow_id: bool = True
    request_type: bool = False
    request_context: bool = False

    def to_bits(self) -> int:
        return (
            (1 if self.workflow_id else 0)
            | (2 if self.request_type else 0)
            | (4 if self.request_context else 0)
        )

    @classmethod
    def from_bits(cls, bits: int) -> "ClassifierMask":
        if bits & ~7:
            raise ValueError(f"unknown mask bits 0x{bits:x}")
        return cls(bool(bits & 1), bool(bits & 2), bool(bits & 4))

    @property
    def empty(self) -> bool:
        return not (self.workflow_id or self.request_type or self.request_context)


@dataclass(frozen=True)
class ClassifierValues:
    """Partial classifier assignment used by binding rules.

    None means the classifier is unspecified.  A binding is valid only
    when the specified classifiers are exactly the masked ones; an empty
    assignment is the special form that declares a channel's default
    object.
    """

    workflow_id: int | None = None
    request_type: int | None = None
    request_context: int | None = None

    @property
    def empty(self) -> bool:
        return (
            self.workflow_id is None
            and self.request_type is None
            and self.request_context is None
        )


def request_token(mask: ClassifierMask, ctx: Context) -> int:
    buf = bytearray()
    if mask.workflow_id:
        buf += struct.pack("<Q", ctx.workflow_id)
    if mask.request_type:
        buf += struct.pack("<Q", int(ctx.request_type))
    if mask.request_context:
        buf += struct.pack("<Q", int(ctx.request_context))
    return murmur3_32(bytes(buf))


def binding_token(mask: ClassifierMask, values: ClassifierValues) -> int:
    """Token for a binding rule; raises ValueError unless the provided
    classifiers match the mask exactly."""
    pairs = (
        ("workflow_id", mask.workflow_id, values.workflow_id),
        ("request_type", mask.request_type, values.request_type),
        ("request_context", mask.request_context, values.request_context),
    )
    buf = bytearray()
    for name, masked, value in pairs:
        if masked and value is None:
            raise ValueError(f"binding omits masked classifier {name}")
        if not masked and value is not None:
            raise ValueError(f"binding sets unmasked classifier {name}")
        if masked:
            buf += struct.pack("<Q", value)
    return murmur3_32(bytes(buf))


@dataclass(frozen=True)
class RoutingTable:
    """Immutable routing snapshot.

    channel_map and each per-channel object map are keyed by token.
    channel_objects records every object living in a channel so phase
    two can apply the single-object shortcut.  Lookups never mutate;
    the stage swaps in a rebuilt table on every accepted rule.
    """

    mask: ClassifierMask = ClassifierMask()
    channel_map: dict[int, int] = field(default_factory=dict)
    object_maps: dict[int, dict[int, int]] = field(default_factory=dict)
    default_channel: int | None = None
    default_objects: dict[int, int] = field(default_factory=dict)
    channel_objects: dict[int, tuple[int, ...]] = field(default_factory=dict)


def select_channel(table: RoutingTable, ctx: Context) -> int:
    token = request_token(table.mask, ctx)
    channel = table.channel_map.get(token)
    if channel is not None:
        return channel
    if table.default_channel is not None:
        return table.default_channel
    raise RoutingError(
        f"no channel for token 0x{token:08x} "
        f"(workflow={ctx.workflow_id} type={ctx.request_type} "
        f"context={ctx.request_context}) and no default channel"
    )


def select_object(table: RoutingTable, channel_id: int, ctx: Context) -> int:
    objects = table.channel_objects.get(channel_id)
    if not objects:
        raise RoutingError(f"channel {channel_id} has no enforcement objects")
    if len(objects) == 1:
        return objects[0]
    token = request_token(table.mask, ctx)
    obj = table.object_maps.get(channel_id, {}).get(token)
    if obj is not None:
        return obj
    default = table.default_objects.get(channel_id)
    if default is not None:
        return default
    raise RoutingError(
        f"no object in channel {channel_id} for token 0x{token:08x} "
        f"and no default object"
    )
