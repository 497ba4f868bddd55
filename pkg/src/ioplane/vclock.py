"""Cooperative virtual time over real threads.

The data plane blocks calling threads on purpose (rate limiting is a
sleep), so a useful simulation needs many concurrent actors and a clock
that jumps straight to the next interesting instant.  VirtualClock runs
each actor on a real OS thread but allows exactly one of them to be
runnable at a time.  An actor surrenders control only inside sleep_ns or
a condition wait; the scheduler then hands control to the next ready
actor, or pops the earliest sleeper and advances virtual now to its wake
time.  With a single runnable thread the interleaving is fully
deterministic: same program, same timeline, every run.

Rules for code running under a VirtualClock:

* Never call sleep_ns or wait_ns while holding a plain threading.Lock
  that another actor may contend for; use a condition from the same
  clock instead.  (One runnable thread means a held lock is never
  released while you wait.)
* Every spawned actor must eventually return; run() raises on deadlock
  when live actors remain but none can ever wake.

Exceptions in any actor abort the whole simulation and re-raise from
run().
"""
from __future__ import annotations

import heapq
import itertools
import threading
from collections import deque
from dataclasses import dataclass, field

from .clock import Clock, ClockCondition


class SimulationDeadlock(RuntimeError):
    pass


class _Abort(BaseException):
    """Unwinds actor stacks after a failure elsewhere; never user-visible."""


class _Actor:
    __slots__ = ("name", "go", "thread")

    def __init__(self, name: str) -> None:
        self.name = name
        self.go = threading.Event()
        self.thread: threading.Thread | None = None


@dataclass
class _Sleeper:
    actor: _Actor
    cancelled: bool = False
    # Set when the wakeup fired so a cond-wait can tell timeout from notify.
    fired: bool = field(default=False)


class VirtualClock(Clock):
    def __init__(self) -> None:
        self._mutex = threading.Lock()
        self._now = 0
        self._seq = itertools.count()
        self._sleep_heap: list[tuple[int, int, _Sleeper]] = []
        self._ready: deque[_Actor] = deque()
        self._actors: dict[int, _Actor] = {}
        self._live = 0
        self._done = threading.Event()
        self._failure: BaseException | None = None

    # -- actor management ------------------------------------------------

    def spawn(self, fn, *args, name: str | None = None) -> None:
        """Register fn as an actor.  It starts blocked; run() dispatches."""
        actor = _Actor(name or getattr(fn, "__name__", "actor"))
        thread = threading.Thread(
            target=self._actor_main, args=(actor, fn, args), name=actor.name, daemon=True
        )
        actor.thread = thread
        with self._mutex:
            self._live += 1
            self._ready.append(actor)
        thread.start()

    def run(self) -> None:
        """Dispatch actors until all have returned.  Re-raises failures."""
        with self._mutex:
            if self._live == 0:
                return
            self._dispatch_locked()
        self._done.wait()
        for actor in list(self._actors.values()):
            if actor.thread is not None:
                actor.thread.join()
        if self._failure is not None:
            raise self._failure

    # -- Clock interface -------------------------------------------------

    def now_ns(self) -> int:
        return self._now

    def sleep_ns(self, delta_ns: int) -> None:
        me = self._me()
        with self._mutex:
            entry = _Sleeper(me)
            heapq.heappush(self._sleep_heap, (self._now + max(delta_ns, 0), next(self._seq), entry))
            self._dispatch_locked()
        self._block(me)

    def new_condition(self) -> ClockCondition:
        return _VirtualCondition(self)

    # -- internals -------------------------------------------------------

    def _actor_main(self, actor: _Actor, fn, args) -> None:
        ident = threading.get_ident()
        with self._mutex:
            self._actors[ident] = actor
        self._block(actor)
        try:
            fn(*args)
        except _Abort:
            pass
        except BaseException as exc:  # noqa: BLE001 - must cross threads
            self._fail(exc)
        finally:
            with self._mutex:
                self._live -= 1
                del self._actors[ident]
                self._dispatch_locked()

    def _me(self) -> _Actor:
        try:
            return self._actors[threading.get_ident()]
        except KeyError:
            raise RuntimeError("only threads spawned on this clock may wait on it") from None

    def _block(self, me: _Actor) -> None:
        me.go.wait()
        me.go.clear()
        if self._failure is not None:
            raise _Abort()

    def _dispatch_locked(self) -> None:
        """Hand control to the next actor.  Caller holds _mutex and is
        about to block (or is exiting)."""
        if self._failure is not None:
            if self._live == 0:
                self._done.set()
            return
        if self._ready:
            self._ready.popleft().go.set()
            return
        while self._sleep_heap:
            wake_ns, _, entry = heapq.heappop(self._sleep_heap)
            if entry.cancelled:
                continue
            entry.fired = True
            if wake_ns > self._now:
                self._now = wake_ns
            entry.actor.go.set()
            return
        if self._live > 0:
            blocked = ", ".join(a.name for a in self._actors.values())
            self._fail_locked(SimulationDeadlock(f"no runnable actor; blocked: {blocked}"))
            return
        self._done.set()

    def _fail(self, exc: BaseException) -> None:
        with self._mutex:
            self._fail_locked(exc)

    def _fail_locked(self, exc: BaseException) -> None:
        if self._failure is None:
            self._failure = exc
        # Wake everything so stacks unwind; one-at-a-time no longer holds,
        # but aborting actors only raise _Abort and exit.
        for actor in self._actors.values():
            actor.go.set()
        if self._live == 0:
            self._done.set()


class _VirtualCondition(ClockCondition):
    def __init__(self, clock: VirtualClock) -> None:
        self._clock = clock
        self._lock = threading.Lock()
        self._waiters: deque[_CondWait] = deque()

    def __enter__(self):
        self._lock.acquire()
        return self

    def __exit__(self, *exc):
        self._lock.release()
        return False

    def wait_ns(self, timeout_ns: int | None = None) -> bool:
        clock = self._clock
        me = clock._me()
        wait = _CondWait(me)
        with clock._mutex:
            self._waiters.append(wait)
            if timeout_ns is not None:
                wait.sleeper = _Sleeper(me)
                heapq.heappush(
                    clock._sleep_heap,
                    (clock._now + max(timeout_ns, 0), next(clock._seq), wait.sleeper),
                )
        # Release the user lock only after registering, so a notify_all
        # racing in cannot be missed; nothing else runs until we yield.
        self._lock.release()
        try:
            with clock._mutex:
                clock._dispatch_locked()
            clock._block(me)
        finally:
            self._lock.acquire()
        if not wait.notified:
            with clock._mutex:
                try:
                    self._waiters.remove(wait)
                except ValueError:
                    pass
        return wait.notified

    def notify_all(self) -> None:
        clock = self._clock
        with clock._mutex:
            while self._waiters:
                wait = self._waiters.popleft()
                wait.notified = True
                if wait.sleeper is not None:
                    wait.sleeper.cancelled = True
                clock._ready.append(wait.actor)


@dataclass
class _CondWait:
    actor: _Actor
    notified: bool = False
    sleeper: _Sleeper | None = None
