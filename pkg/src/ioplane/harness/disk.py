"""Bandwidth-only disk model with fair sharing.

The disk serves every in-flight request at an equal fraction of its
capacity (processor sharing), which is how a cgroup-limited SSD behaves
for streaming I/O once seek effects are out of the picture.  Service is
computed piecewise: between arrivals and completions the active set is
fixed, so each segment advances every request by capacity/n until the
next one finishes.  Byte progress is tracked in 1e-9-byte units to keep
long runs drift-free.

submit() blocks the calling actor until its bytes are served and returns
the completion timestamp; per-requester cumulative read/write counters
mirror what a kernel exposes per process.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from ..clock import Clock

_UNITS = 10**9  # sub-byte accounting units per byte


class DiskStopped(RuntimeError):
    pass


@dataclass
class _Flight:
    requester: object
    kind: str
    size: int
    remaining_units: int
    done_ns: int | None = None


class SimDisk:
    def __init__(self, clock: Clock, capacity_bps: int) -> None:
        if capacity_bps <= 0:
            raise ValueError("capacity must be positive")
        self.capacity_bps = capacity_bps
        self._clock = clock
        self._cond = clock.new_condition()
        self._active: dict[int, _Flight] = {}
        self._ids = itertools.count()
        self._last_ns = clock.now_ns()
        self._counters: dict[object, list[int]] = {}
        self._served_bytes = 0
        self._stopped = False

    def submit(self, requester, kind: str, size: int) -> int:
        """Serve one request; blocks until complete.  Returns the virtual
        completion timestamp in nanoseconds."""
        if kind not in ("read", "write"):
            raise ValueError(f"kind must be read or write, got {kind!r}")
        if size <= 0:
            raise ValueError("size must be positive")
        flight = _Flight(requester, kind, size, size * _UNITS)
        with self._cond:
            if self._stopped:
                raise DiskStopped("disk stopped")
            self._advance(self._clock.now_ns())
            token = next(self._ids)
            self._active[token] = flight
            while flight.done_ns is None:
                if self._stopped:
                    self._active.pop(token, None)
                    raise DiskStopped("disk stopped")
                self._advance(self._clock.now_ns())
                if flight.done_ns is not None:
                    break
                self._cond.wait_ns(self._next_completion_wait())
        return flight.done_ns

    def counters(self, requester) -> tuple[int, int]:
        """Cumulative (read_bytes, write_bytes) completed for requester."""
        with self._cond:
            self._advance(self._clock.now_ns())
            pair = self._counters.get(requester)
            return (pair[0], pair[1]) if pair else (0, 0)

    @property
    def served_bytes(self) -> int:
        return self._served_bytes

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify_all()

    # -- internals, caller holds _cond -----------------------------------

    def _next_completion_wait(self) -> int:
        n = len(self._active)
        min_remaining = min(f.remaining_units for f in self._active.values())
        # Time until the least-loaded request finishes at capacity/n.
        return -(-min_remaining * n // self.capacity_bps)

    def _advance(self, to_ns: int) -> None:
        while self._last_ns < to_ns and self._active:
            n = len(self._active)
            min_remaining = min(f.remaining_units for f in self._active.values())
            finish_span = -(-min_remaining * n // self.capacity_bps)
            span = min(to_ns - self._last_ns, finish_span)
            served_each = self.capacity_bps * span // n
            now = self._last_ns + span
            finished = []
            for token, flight in self._active.items():
                flight.remaining_units -= served_each
                if flight.remaining_units <= 0:
                    flight.done_ns = now
                    finished.append(token)
            for token in finished:
                flight = self._active.pop(token)
                pair = self._counters.setdefault(flight.requester, [0, 0])
                pair[0 if flight.kind == "read" else 1] += flight.size
                self._served_bytes += flight.size
            self._last_ns = now
            if finished:
                self._cond.notify_all()
        if self._last_ns < to_ns:
            self._last_ns = to_ns
