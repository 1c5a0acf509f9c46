"""Campaign clocks.

The scheduler only ever talks to a clock, so the same control loop drives
real processes (wall time) and the simulator (virtual time).
"""

from __future__ import annotations

import time
from typing import Callable


class VirtualClock:
    """Logical clock; ``sleep`` advances time instantly."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def sleep(self, seconds: float, poll: Callable[[], None] | None = None) -> None:
        self._now += max(0.0, seconds)
        if poll is not None:
            poll()


class WallClock:
    """Monotonic wall clock. ``sleep`` calls ``poll`` every ``poll_interval`` seconds."""

    def __init__(self, poll_interval: float = 1.0):
        self.poll_interval = poll_interval
        self._origin = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._origin

    def sleep(self, seconds: float, poll: Callable[[], None] | None = None) -> None:
        deadline = time.monotonic() + max(0.0, seconds)
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                break
            time.sleep(min(left, self.poll_interval))
            if poll is not None:
                poll()
