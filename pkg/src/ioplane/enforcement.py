"""Enforcement objects and channels.

A channel is a conduit with a FIFO submission queue: requests routed to
it enforce strictly in arrival order, one at a time, each against one of
the channel's enforcement objects.  Two object kinds exist.  Noop admits
immediately and exists so statistics get recorded.  TokenBucket ("drl")
prices each byte at one token (minimum one per request, so metadata-only
traffic is still governed) and blocks the caller until the bucket can
cover the cost.

Bucket semantics, precisely, since tests replay them against an
independent oracle:

* capacity = rate x refill_period, and the bucket starts full.
* Refill is continuous and computed lazily from elapsed clock time with
  exact integer arithmetic: token state is (whole tokens, remainder in
  1e-9-token units), so no float drift ever accumulates.
* A request costing more than capacity drains the bucket in
  capacity-sized gulps; because the fractional remainder carries between
  gulps, total admission time equals the single closed-form wait.
* Reconfiguration takes effect at the next refill-period boundary
  (boundaries anchored where the last reconfiguration landed), never
  retroactively: tokens already granted stay granted, and the level is
  clamped when capacity shrinks.
* close() unblocks any waiter with an error.
"""
from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from collections import deque

from .clock import Clock
from .types import Context, EnforcementError, StatsRow

_UNITS = 10**9  # fractional-token units per whole token


def _as_positive_int(value, key: str) -> int:
    try:
        out = int(round(float(value)))
    except (TypeError, ValueError):
        raise ValueError(f"{key} must be numeric, got {value!r}") from None
    if out < 1:
        raise ValueError(f"{key} must be >= 1, got {value!r}")
    return out


class EnforcementObject(ABC):
    kind: str = "?"

    @abstractmethod
    def enforce(self, ctx: Context) -> int:
        """Admit the request, blocking as the mechanism requires.
        Returns the imposed wait in nanoseconds."""

    @abstractmethod
    def configure(self, state: dict) -> None: ...

    def close(self) -> None:
        pass


class Noop(EnforcementObject):
    kind = "noop"

    def enforce(self, ctx: Context) -> int:
        return 0

    def configure(self, state: dict) -> None:
        if state:
            raise ValueError(f"noop accepts no configuration, got keys {sorted(state)}")


class TokenBucket(EnforcementObject):
    kind = "drl"

    def __init__(self, clock: Clock, rate: int, refill_period_us: int = 100_000) -> None:
        self._clock = clock
        self._cond = clock.new_condition()
        self._rate = _as_positive_int(rate, "rate")
        self._period_ns = _as_positive_int(refill_period_us, "refill_period_us") * 1000
        self._capacity = max(1, self._rate * self._period_ns // _UNITS)
        self._avail = self._capacity
        self._frac = 0  # 1e-9-token units, always in [0, 1e9)
        self._last_ns = clock.now_ns()
        self._anchor_ns = self._last_ns
        self._pending: dict | None = None
        self._pending_at_ns = 0
        self._closed = False

    # Introspection for tests and the control handshake.
    @property
    def rate(self) -> int:
        return self._rate

    @property
    def capacity(self) -> int:
        return self._capacity

    def level(self) -> tuple[int, int]:
        with self._cond:
            self._refill(self._clock.now_ns())
            return self._avail, self._frac

    def enforce(self, ctx: Context) -> int:
        return self.acquire(max(ctx.request_size, 1))

    def acquire(self, cost: int) -> int:
        if cost < 1:
            raise ValueError("cost must be >= 1")
        remaining = cost
        started_ns: int | None = None
        with self._cond:
            while True:
                if self._closed:
                    raise EnforcementError("enforcement object shut down")
                now = self._clock.now_ns()
                self._refill(now)
                take = min(self._avail, remaining)
                self._avail -= take
                remaining -= take
                if remaining == 0:
                    return 0 if started_ns is None else now - started_ns
                if started_ns is None:
                    started_ns = now
                target = min(remaining, self._capacity)
                needed_units = target * _UNITS - self._frac
                wait_ns = -(-needed_units // self._rate)
                if self._pending is not None and self._pending_at_ns > now:
                    wait_ns = min(wait_ns, self._pending_at_ns - now)
                self._cond.wait_ns(wait_ns)

    def configure(self, state: dict) -> None:
        parsed = {}
        for key, value in state.items():
            if key not in ("rate", "refill_period_us"):
                raise ValueError(f"drl does not recognize key {key!r}")
            parsed[key] = _as_positive_int(value, key)
        if not parsed:
            return
        with self._cond:
            if self._closed:
                raise EnforcementError("enforcement object shut down")
            now = self._clock.now_ns()
            self._refill(now)
            periods = (now - self._anchor_ns) // self._period_ns + 1
            self._pending = parsed
            self._pending_at_ns = self._anchor_ns + periods * self._period_ns
            # Waiters recompute their sleep so the boundary is honored.
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    # -- internals, caller holds self._cond ------------------------------

    def _refill(self, now_ns: int) -> None:
        if self._pending is not None and now_ns >= self._pending_at_ns:
            self._advance(self._pending_at_ns)
            pending, self._pending = self._pending, None
            self._rate = pending.get("rate", self._rate)
            if "refill_period_us" in pending:
                self._period_ns = pending["refill_period_us"] * 1000
            self._capacity = max(1, self._rate * self._period_ns // _UNITS)
            if self._avail >= self._capacity:
                self._avail = self._capacity
                self._frac = 0
            self._anchor_ns = self._pending_at_ns
        self._advance(now_ns)

    def _advance(self, to_ns: int) -> None:
        if to_ns <= self._last_ns:
            return
        units = self._rate * (to_ns - self._last_ns) + self._frac
        self._avail += units // _UNITS
        self._frac = units % _UNITS
        if self._avail >= self._capacity:
            self._avail = self._capacity
            self._frac = 0
        self._last_ns = to_ns


def make_object(kind: str, state: dict, clock: Clock) -> EnforcementObject:
    if kind == "noop":
        if state:
            raise ValueError(f"noop accepts no initial state, got keys {sorted(state)}")
        return Noop()
    if kind == "drl":
        unknown = set(state) - {"rate", "refill_period_us"}
        if unknown:
            raise ValueError(f"drl does not recognize keys {sorted(unknown)}")
        if "rate" not in state:
            raise ValueError("drl requires a rate")
        return TokenBucket(
            clock,
            rate=state["rate"],
            refill_period_us=state.get("refill_period_us", 100_000),
        )
    raise ValueError(f"unknown enforcement object kind {kind!r}")


class _Cell:
    __slots__ = ("bytes", "ops")

    def __init__(self) -> None:
        self.bytes = 0
        self.ops = 0


class Channel:
    """FIFO conduit holding enforcement objects and windowed statistics."""

    def __init__(self, channel_id: int, clock: Clock) -> None:
        self.channel_id = channel_id
        self._clock = clock
        self._cond = clock.new_condition()
        self._queue: deque[object] = deque()
        self._objects: dict[int, EnforcementObject] = {}
        self._closed = False
        self._stats_lock = threading.Lock()
        self._cells: dict[tuple[int, int], _Cell] = {}
        self._window_start_ns = clock.now_ns()

    def add_object(self, object_id: int, obj: EnforcementObject) -> None:
        with self._cond:
            if self._closed:
                raise EnforcementError(f"channel {self.channel_id} closed")
            if object_id in self._objects:
                raise ValueError(f"object {object_id} already exists in channel {self.channel_id}")
            self._objects[object_id] = obj

    def remove_object(self, object_id: int) -> None:
        with self._cond:
            obj = self._objects.pop(object_id, None)
        if obj is None:
            raise KeyError(object_id)
        obj.close()

    def object_ids(self) -> tuple[int, ...]:
        with self._cond:
            return tuple(self._objects)

    def get_object(self, object_id: int) -> EnforcementObject | None:
        with self._cond:
            return self._objects.get(object_id)

    def enforce(self, object_id: int, ctx: Context) -> int:
        """Waits for FIFO turn, then enforces against object_id.
        Returns the wait the object imposed (queueing wait excluded)."""
        ticket = object()
        with self._cond:
            if self._closed:
                raise EnforcementError(f"channel {self.channel_id} closed")
            self._queue.append(ticket)
            while self._queue[0] is not ticket:
                self._cond.wait_ns(None)
            obj = self._objects.get(object_id)
            if obj is None:
                self._queue.popleft()
                self._cond.notify_all()
                raise EnforcementError(
                    f"object {object_id} not present in channel {self.channel_id}"
                )
        # The head-of-line request enforces outside the queue lock; the
        # queue itself only serializes turns.
        try:
            wait_ns = obj.enforce(ctx)
        finally:
            with self._cond:
                self._queue.popleft()
                self._cond.notify_all()
        with self._stats_lock:
            cell = self._cells.setdefault((ctx.workflow_id, int(ctx.request_context)), _Cell())
            cell.bytes += ctx.request_size
            cell.ops += 1
        return wait_ns

    def collect(self, now_ns: int) -> list[StatsRow]:
        """Snapshot and reset the statistics window."""
        with self._stats_lock:
            window = now_ns - self._window_start_ns
            rows = []
            for (workflow_id, request_context), cell in sorted(self._cells.items()):
                throughput = cell.bytes * 1e9 / window if window > 0 else 0.0
                rows.append(
                    StatsRow(
                        channel_id=self.channel_id,
                        workflow_id=workflow_id,
                        request_context=request_context,
                        bytes_enforced=cell.bytes,
                        ops=cell.ops,
                        window_ns=window,
                        throughput_bps=throughput,
                    )
                )
                cell.bytes = 0
                cell.ops = 0
            self._window_start_ns = now_ns
        return rows

    def drain_and_close(self) -> None:
        """Rejects new arrivals, waits out queued requests, closes objects."""
        with self._cond:
            self._closed = True
            while self._queue:
                self._cond.wait_ns(None)
            objects = list(self._objects.values())
            self._objects.clear()
        for obj in objects:
            obj.close()
