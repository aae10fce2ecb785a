from __future__ import annotations

import threading
import time
from typing import Callable

Clock = Callable[[], int]


def system_clock() -> int:
    return int(time.time())


class ManualClock:
    """Monotone integer clock advanced explicitly. Used by tests and the simulator."""

    def __init__(self, start: int = 0):
        self._now = start
        self._lock = threading.Lock()

    def __call__(self) -> int:
        return self._now

    def advance(self, ticks: int = 1) -> int:
        if ticks < 0:
            raise ValueError("clock cannot go backwards")
        with self._lock:
            self._now += ticks
            return self._now

    def set(self, value: int) -> None:
        with self._lock:
            if value < self._now:
                raise ValueError("clock cannot go backwards")
            self._now = value
