"""Injectable time sources. All times are integer epoch milliseconds."""

from __future__ import annotations

import threading
import time


class VirtualClock:
    """Manually advanced clock; ``sleep_until`` jumps instead of waiting."""

    def __init__(self, start: int = 0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> int:
        return self._now

    def set(self, t: int) -> None:
        with self._lock:
            if t < self._now:
                raise ValueError("virtual clock cannot move backwards")
            self._now = t

    def advance(self, millis: int) -> int:
        self.set(self._now + millis)
        return self._now

    def sleep_until(self, t: int) -> None:
        if t > self._now:
            self.set(t)


class SystemClock:
    def now(self) -> int:
        return time.time_ns() // 1_000_000

    def sleep_until(self, t: int) -> None:
        delay = (t - self.now()) / 1000
        if delay > 0:
            time.sleep(delay)
