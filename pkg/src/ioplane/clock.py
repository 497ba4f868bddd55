"""Injectable time sources.

Every component that sleeps, stamps, or waits does so through a Clock so
the simulation harness can swap wall time for virtual time without the
component noticing.  Three implementations exist:

* RealClock       -- monotonic OS clock, real threading primitives.
* ManualClock     -- single-threaded stub; sleeping just advances a counter.
* VirtualClock    -- cooperative multi-actor scheduler (see vclock.py).

Condition variables are part of the clock because a timed wait is a form
of sleeping.  ClockCondition mirrors the slice of threading.Condition
this package uses: context-manage the lock, wait with a timeout in
nanoseconds, notify_all.
"""
from __future__ import annotations

import threading
import time
from abc import ABC, abstractmethod


class ClockCondition(ABC):
    """Condition variable whose timed waits consult the owning clock.

    wait_ns returns True when the wait ended via notify_all, False when
    the timeout elapsed first.  A timeout of None waits indefinitely.
    """

    @abstractmethod
    def __enter__(self): ...

    @abstractmethod
    def __exit__(self, *exc): ...

    @abstractmethod
    def wait_ns(self, timeout_ns: int | None = None) -> bool: ...

    @abstractmethod
    def notify_all(self) -> None: ...


class Clock(ABC):
    @abstractmethod
    def now_ns(self) -> int: ...

    @abstractmethod
    def sleep_ns(self, delta_ns: int) -> None: ...

    @abstractmethod
    def new_condition(self) -> ClockCondition: ...


class _RealCondition(ClockCondition):
    def __init__(self) -> None:
        self._cond = threading.Condition()

    def __enter__(self):
        self._cond.acquire()
        return self

    def __exit__(self, *exc):
        self._cond.release()
        return False

    def wait_ns(self, timeout_ns: int | None = None) -> bool:
        timeout = None if timeout_ns is None else max(timeout_ns, 0) / 1e9
        return self._cond.wait(timeout)

    def notify_all(self) -> None:
        self._cond.notify_all()


class RealClock(Clock):
    """Wall-clock time via time.monotonic_ns."""

    def now_ns(self) -> int:
        return time.monotonic_ns()

    def sleep_ns(self, delta_ns: int) -> None:
        if delta_ns > 0:
            time.sleep(delta_ns / 1e9)

    def new_condition(self) -> ClockCondition:
        return _RealCondition()


class _ManualCondition(ClockCondition):
    def __init__(self, clock: "ManualClock") -> None:
        self._clock = clock
        self._lock = threading.Lock()

    def __enter__(self):
        self._lock.acquire()
        return self

    def __exit__(self, *exc):
        self._lock.release()
        return False

    def wait_ns(self, timeout_ns: int | None = None) -> bool:
        # Single-threaded: nobody can notify while we wait, so an untimed
        # wait could never return.
        if timeout_ns is None:
            raise RuntimeError("untimed wait on a ManualClock would never wake")
        self._clock.sleep_ns(timeout_ns)
        return False

    def notify_all(self) -> None:
        pass


class ManualClock(Clock):
    """Deterministic single-threaded clock for trace replay in tests.

    sleep_ns advances the reading by exactly the requested amount; a
    timed condition wait behaves as a sleep that was never notified.
    """

    def __init__(self, start_ns: int = 0) -> None:
        self._now = start_ns

    def now_ns(self) -> int:
        return self._now

    def sleep_ns(self, delta_ns: int) -> None:
        if delta_ns > 0:
            self._now += delta_ns

    def advance_ns(self, delta_ns: int) -> None:
        self.sleep_ns(delta_ns)

    def new_condition(self) -> ClockCondition:
        return _ManualCondition(self)
