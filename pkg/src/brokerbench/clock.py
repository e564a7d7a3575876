"""Clock sources used by publishers and subscribers.

Embedded timestamps use the real-time clock so that two processes on the
same host agree on the epoch; pacing uses the monotonic clock.
"""

from __future__ import annotations

import time

BUSY_WAIT_NS = 50_000


class SystemClock:
    wall_ns = staticmethod(time.time_ns)
    mono_ns = staticmethod(time.monotonic_ns)

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def sleep_until(self, deadline_ns: int) -> None:
        """Sleep coarsely, then spin for the last 50 us before ``deadline_ns``."""
        remaining = deadline_ns - time.monotonic_ns()
        if remaining > BUSY_WAIT_NS:
            time.sleep((remaining - BUSY_WAIT_NS) / 1e9)
        while time.monotonic_ns() < deadline_ns:
            pass


SYSTEM_CLOCK = SystemClock()
