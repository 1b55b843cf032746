"""Round-trip clock offset estimation and half-delay position extrapolation."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ClockSync:
    offset: float = 0.0        # server clock minus client clock
    round_trip: float = 0.0
    last_update: float = 0.0

    def to_server(self, t_client: float) -> float:
        return t_client + self.offset

    def to_client(self, t_server: float) -> float:
        return t_server - self.offset


def ntp_update(t0: float, t1: float, t2: float, t3: float) -> ClockSync:
    """Offset and round-trip delay from one poll.

    ``t0``/``t3`` are the client's send and receive times, ``t1``/``t2`` the
    server's receive and reply times.
    """
    if t3 < t0 or t2 < t1:
        raise ValueError("timestamps out of order")
    rtt = (t3 - t0) - (t2 - t1)
    if rtt < 0:
        raise ValueError(f"negative round-trip delay {rtt:.6f} s")
    offset = ((t1 - t0) - (t3 - t2)) / 2.0
    return ClockSync(offset=offset, round_trip=rtt, last_update=t3)


def extrapolate(s: float, v: float, dt: float) -> float:
    """Advance a reported position by half the round-trip delay."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return s + v * dt / 2.0
