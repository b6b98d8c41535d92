"""Wall and virtual clocks.

The crawler only ever asks a clock for ``now()`` (POSIX seconds) and to
``sleep()``; the simulator swaps in :class:`VirtualClock` so that politeness
delays and scripted URI shifts happen instantly and deterministically.
"""
from __future__ import annotations

import heapq
import itertools
import threading
import time
from datetime import datetime, timezone
from typing import Callable, List, Tuple

from .core import Timestamp14


class SystemClock:
    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float):
        if seconds > 0:
            time.sleep(seconds)

    def timestamp(self) -> Timestamp14:
        return Timestamp14.from_datetime(datetime.fromtimestamp(self.now(), timezone.utc))


class VirtualClock:
    """Manually advanced clock with scheduled callbacks.

    ``sleep`` advances time immediately. Callbacks registered with
    :meth:`call_at` fire, in time order, as soon as time reaches them; they run
    on the thread that advanced the clock.
    """

    def __init__(self, start):
        if isinstance(start, str):
            start = Timestamp14(start).to_datetime().timestamp()
        self._now = float(start)
        self._lock = threading.RLock()
        self._pending: List[Tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()

    def now(self) -> float:
        with self._lock:
            return self._now

    def timestamp(self) -> Timestamp14:
        return Timestamp14.from_datetime(datetime.fromtimestamp(self.now(), timezone.utc))

    def sleep(self, seconds: float):
        if seconds > 0:
            self.advance_to(self.now() + seconds)

    def advance_to(self, when: float):
        with self._lock:
            while self._pending and self._pending[0][0] <= when:
                at, _, fn = heapq.heappop(self._pending)
                self._now = max(self._now, at)
                fn()
            self._now = max(self._now, when)

    def call_at(self, when, fn: Callable[[], None]):
        if isinstance(when, str):
            when = Timestamp14(when).to_datetime().timestamp()
        with self._lock:
            if when <= self._now:
                fn()
            else:
                heapq.heappush(self._pending, (float(when), next(self._seq), fn))
