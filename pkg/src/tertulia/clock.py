"""Injectable time sources.

The engine never reads wall time directly; it is driven by a TimeSource so
that whole sessions run deterministically under SimulatedClock and in real
time under WallClock.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable, Optional, Protocol


class TimerHandle(Protocol):
    def cancel(self) -> None: ...


class TimeSource(Protocol):
    def now_ms(self) -> int: ...

    def schedule(self, delay_ms: int, callback: Callable[[], None]) -> TimerHandle: ...


class _SimHandle:
    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class SimulatedClock:
    """Deterministic clock: callbacks fire in (time, insertion) order when run."""

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._pending: list[tuple[int, int, _SimHandle, Callable[[], None]]] = []
        self._counter = itertools.count()

    def now_ms(self) -> int:
        return self._now

    def schedule(self, delay_ms: int, callback: Callable[[], None]) -> _SimHandle:
        if delay_ms < 0:
            raise ValueError("delay_ms must be non-negative")
        handle = _SimHandle()
        heapq.heappush(
            self._pending, (self._now + delay_ms, next(self._counter), handle, callback)
        )
        return handle

    def pending_count(self) -> int:
        return sum(1 for _, _, h, _ in self._pending if not h.cancelled)

    def fire_next(self) -> bool:
        """Advance to the next live callback and run it. False if none left."""
        while self._pending:
            at, _, handle, callback = heapq.heappop(self._pending)
            if handle.cancelled:
                continue
            self._now = at
            callback()
            return True
        return False

    def run_until(
        self,
        done: Optional[Callable[[], bool]] = None,
        horizon_ms: Optional[int] = None,
    ) -> None:
        """Fire callbacks in order until done() holds, the queue empties, or
        the next callback lies beyond horizon_ms."""
        while self._pending:
            if done is not None and done():
                return
            if horizon_ms is not None:
                at = self._next_live_time()
                if at is None or at > horizon_ms:
                    return
            self.fire_next()

    def advance_to(self, at_ms: int) -> None:
        """Run every callback due at or before at_ms, then set now to at_ms."""
        while True:
            nxt = self._next_live_time()
            if nxt is None or nxt > at_ms:
                break
            self.fire_next()
        self._now = max(self._now, at_ms)

    def _next_live_time(self) -> Optional[int]:
        while self._pending:
            at, _, handle, _ = self._pending[0]
            if handle.cancelled:
                heapq.heappop(self._pending)
                continue
            return at
        return None


class WallClock:
    """Session clock anchored at construction; timers run on threading.Timer."""

    def __init__(self) -> None:
        self._t0 = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._t0) * 1000)

    def schedule(self, delay_ms: int, callback: Callable[[], None]) -> threading.Timer:
        timer = threading.Timer(delay_ms / 1000.0, callback)
        timer.daemon = True
        timer.start()
        return timer
