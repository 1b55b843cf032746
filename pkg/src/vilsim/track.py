"""Closed-circuit track geometry, speed-limit zones and arc-length helpers.

The circuit is two straights joined by two semicircular U-turns.  Arc length
``s`` starts at the beginning of the first straight and increases in the
direction of travel.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

STRAIGHT_LENGTH = 1550.0
TURN_DIAMETER = 95.0
V_STRAIGHT = 22.3
V_TURN = 7.0
COMFORT_DECEL = -2.0
VEHICLE_LENGTH = 5.0


@dataclass(frozen=True)
class SpeedZone:
    start_s: float
    end_s: float
    v_limit: float
    kind: str = "straight"

    def __post_init__(self):
        if not self.start_s < self.end_s:
            raise ValueError(f"zone start {self.start_s} must precede end {self.end_s}")
        if self.v_limit <= 0:
            raise ValueError("zone speed limit must be positive")

    @property
    def length(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class TrackMap:
    circuit_length: float
    zones: tuple[SpeedZone, ...]
    comfortable_decel: float = COMFORT_DECEL
    vehicle_length: float = VEHICLE_LENGTH
    straight_length: float = STRAIGHT_LENGTH
    turn_diameter: float = TURN_DIAMETER

    def __post_init__(self):
        if self.comfortable_decel >= 0:
            raise ValueError("comfortable deceleration a_c must be negative")
        if not self.zones:
            raise ValueError("track needs at least one zone")
        if abs(self.zones[0].start_s) > 1e-9:
            raise ValueError("zones must start at s=0")
        for prev, nxt in zip(self.zones, self.zones[1:]):
            if abs(prev.end_s - nxt.start_s) > 1e-9:
                raise ValueError("zones must be contiguous")
        if abs(self.zones[-1].end_s - self.circuit_length) > 1e-6:
            raise ValueError("zones must cover the whole circuit")
        object.__setattr__(self, "_ends", tuple(z.end_s for z in self.zones))

    def wrap(self, s: float) -> float:
        s = math.fmod(s, self.circuit_length)
        if s < 0:
            s += self.circuit_length
        # fmod can return exactly L for tiny negative inputs
        return 0.0 if s >= self.circuit_length else s

    def zone_index(self, s: float) -> int:
        k = bisect.bisect_right(self._ends, self.wrap(s))
        return min(k, len(self.zones) - 1)

    def zone_at(self, s: float) -> SpeedZone:
        return self.zones[self.zone_index(s)]

    def limit_at(self, s: float) -> float:
        return self.zone_at(s).v_limit

    def zones_ahead(self, s: float, horizon: float):
        """Yield ``(distance, v_limit)`` for each zone start ahead of ``s``
        within ``horizon`` metres, nearest first."""
        s = self.wrap(s)
        k = self.zone_index(s)
        n = len(self.zones)
        dist = self.zones[k].end_s - s
        j = k
        while dist <= horizon:
            j = (j + 1) % n
            yield dist, self.zones[j].v_limit
            dist += self.zones[j].length

    def envelope_limit(self, s: float, a_c: float | None = None) -> float:
        """Speed limit at ``s`` tightened by the constant-deceleration approach
        envelope to every slower zone ahead."""
        a_c = self.comfortable_decel if a_c is None else a_c
        v_here = self.limit_at(s)
        reach = (v_here ** 2) / (-2.0 * a_c)
        out = v_here
        for dist, v_lim in self.zones_ahead(s, reach):
            if v_lim < out:
                out = min(out, math.sqrt(v_lim ** 2 - 2.0 * a_c * dist))
        return out

    def xy(self, s: float) -> tuple[float, float, float]:
        """Planar position and heading for arc length ``s``.

        Straight 1 runs along +x from the origin, the first U-turn bends left,
        straight 2 runs back along -x, and the second U-turn closes the loop.
        """
        s = self.wrap(s)
        ls = self.straight_length
        r = self.turn_diameter / 2.0
        lt = math.pi * r
        if s < ls:
            return s, 0.0, 0.0
        s -= ls
        if s < lt:
            phi = s / r
            return ls + r * math.sin(phi), r - r * math.cos(phi), phi
        s -= lt
        if s < ls:
            return ls - s, 2 * r, math.pi
        s -= ls
        phi = s / r
        return -r * math.sin(phi), r + r * math.cos(phi), math.pi + phi

    def project(self, x: float, y: float) -> float:
        """Arc length of the point on the centreline nearest to ``(x, y)``."""
        ls = self.straight_length
        r = self.turn_diameter / 2.0
        lt = math.pi * r
        cands = []
        s1 = min(max(x, 0.0), ls)
        cands.append((math.hypot(x - s1, y), s1))
        phi = min(max(math.atan2(x - ls, r - y), 0.0), math.pi)
        px, py = ls + r * math.sin(phi), r - r * math.cos(phi)
        cands.append((math.hypot(x - px, y - py), ls + r * phi))
        s3 = min(max(ls - x, 0.0), ls)
        cands.append((math.hypot(x - (ls - s3), y - 2 * r), ls + lt + s3))
        phi = min(max(math.atan2(-x, y - r), 0.0), math.pi)
        px, py = -r * math.sin(phi), r + r * math.cos(phi)
        cands.append((math.hypot(x - px, y - py), 2 * ls + lt + r * phi))
        return self.wrap(min(cands)[1])


@dataclass
class VehicleState:
    s: float = 0.0
    v: float = 0.0
    a: float = 0.0
    heading: float = 0.0
    lap: int = 0
    brake_on: bool = False
    timestamp: float = 0.0

    def advance(self, ds: float, track: TrackMap) -> "VehicleState":
        """Move forward by ``ds`` metres, counting start-line crossings."""
        raw = self.s + ds
        laps = math.floor(raw / track.circuit_length)
        return replace(self, s=track.wrap(raw), lap=self.lap + laps)

    def odometer(self, track: TrackMap) -> float:
        return self.lap * track.circuit_length + self.s


def make_track(
    straight_length: float = STRAIGHT_LENGTH,
    turn_diameter: float = TURN_DIAMETER,
    v_straight: float = V_STRAIGHT,
    v_turn: float = V_TURN,
    a_c: float = COMFORT_DECEL,
    vehicle_length: float = VEHICLE_LENGTH,
) -> TrackMap:
    turn = math.pi * turn_diameter / 2.0
    edges = [0.0, straight_length, straight_length + turn,
             2 * straight_length + turn, 2 * straight_length + 2 * turn]
    kinds = [("straight", v_straight), ("uturn", v_turn)] * 2
    zones = tuple(
        SpeedZone(edges[k], edges[k + 1], lim, kind)
        for k, (kind, lim) in enumerate(kinds)
    )
    return TrackMap(
        circuit_length=edges[-1],
        zones=zones,
        comfortable_decel=a_c,
        vehicle_length=vehicle_length,
        straight_length=straight_length,
        turn_diameter=turn_diameter,
    )


def default_track() -> TrackMap:
    return make_track()


def track_from_config(cfg: Mapping[str, str]) -> TrackMap:
    keys = ("straight_length", "turn_diameter", "v_straight", "v_turn", "a_c", "vehicle_length")
    kwargs = {k: float(cfg[k]) for k in keys if k in cfg}
    return make_track(**kwargs)


def gap_ahead(follower: VehicleState, leader: VehicleState, track: TrackMap,
              vehicle_length: float | None = None) -> float:
    """Distance from ``follower`` forward to ``leader`` along the ring.

    With ``vehicle_length`` omitted the track's configured length is
    subtracted (bumper to bumper); pass 0 for centre-to-centre.
    """
    length = track.vehicle_length if vehicle_length is None else vehicle_length
    ds = track.wrap(leader.s - follower.s)
    return ds - length


def decel_distance(v_hi: float, v_lo: float, a_c: float) -> float:
    """Distance needed to slow from ``v_hi`` to ``v_lo`` at constant ``a_c``."""
    if a_c >= 0:
        raise ValueError("a_c must be negative")
    if v_lo < 0 or v_hi < v_lo:
        raise ValueError("need v_hi >= v_lo >= 0")
    return (v_lo ** 2 - v_hi ** 2) / (2.0 * a_c)
