"""Virtual and wall clocks, both reading in milliseconds since their start."""

from __future__ import annotations

import time


class VirtualClock:
    """Time moves only when the caller advances it, so runs are exactly
    reproducible."""

    virtual = True

    def __init__(self, start_ms: int = 0):
        self._now = start_ms

    def now(self) -> int:
        return self._now

    def advance_to(self, t_ms: int) -> None:
        if t_ms > self._now:
            self._now = t_ms

    sleep_until = advance_to


class WallClock:
    virtual = False

    # Sleep coarse, then spin the final stretch; time.sleep overshoots by ~0.1-1 ms.
    SPIN_MS = 1.5

    def __init__(self):
        self._t0 = time.perf_counter()

    def now(self) -> float:
        return (time.perf_counter() - self._t0) * 1000.0

    def sleep_until(self, t_ms: float) -> None:
        while True:
            remaining = t_ms - self.now()
            if remaining <= 0:
                return
            if remaining > self.SPIN_MS:
                time.sleep((remaining - self.SPIN_MS) / 1000.0)

    def advance_to(self, t_ms: float) -> None:
        self.sleep_until(t_ms)
