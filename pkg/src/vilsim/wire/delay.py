"""Fixed-latency delivery queue used to emulate V2V radio delay."""
from __future__ import annotations

from collections import deque
from typing import Any


class DelayedQueue:
    """FIFO that releases items once ``send_time + delay`` has passed.

    Delivery is head-of-line, so send order is preserved even if delays differ.
    """

    def __init__(self, delay: float = 0.1, eps: float = 1e-9):
        if delay < 0:
            raise ValueError("delay must be non-negative")
        self.delay = delay
        self.eps = eps
        self._q: deque[tuple[float, Any]] = deque()

    def __len__(self):
        return len(self._q)

    def push(self, item: Any, t_send: float, delay: float | None = None):
        d = self.delay if delay is None else delay
        if d < 0:
            raise ValueError("delay must be non-negative")
        self._q.append((t_send + d, item))

    def pop_ready(self, t_now: float) -> list[Any]:
        out = []
        while self._q and self._q[0][0] <= t_now + self.eps:
            out.append(self._q.popleft()[1])
        return out


def delayed_send(queue: DelayedQueue, message: Any, t_send: float, delay: float | None = None) -> float:
    """Schedule ``message`` and return its release time."""
    queue.push(message, t_send, delay)
    return t_send + (queue.delay if delay is None else delay)
