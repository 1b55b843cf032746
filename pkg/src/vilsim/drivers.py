"""Baseline human-driver car-following models and the speed-limit override.

``wie99_accel`` follows the psycho-physical Wiedemann 99 thresholds (standstill
distance, following band, perception dead-bands) and ``idm_accel`` keeps the
interaction term of the intelligent driver model unsquared.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace
from typing import Mapping, NamedTuple

from .track import COMFORT_DECEL, TrackMap, VehicleState

KMH_80 = 80.0 / 3.6


class FollowingState(str, enum.Enum):
    EMERGENCY = "A"    # decelerate, increase distance
    CLOSING = "B"      # decelerate, decrease distance
    FOLLOWING = "f"
    FREE = "w"


@dataclass(frozen=True)
class Wie99Params:
    CC0: float = 3.00
    CC1: float = 1.35
    CC2: float = 8.00
    CC3: float = -8.00
    CC4: float = -0.35
    CC5: float = 0.35
    CC6: float = 11.4
    CC7: float = 0.25
    CC8: float = 3.50
    CC9: float = 1.50
    driver_random: float = 0.35
    speed_factor: float = 1.0     # desired speed as a fraction of the zone limit

    def __post_init__(self):
        if self.CC0 <= 0 or self.CC1 <= 0:
            raise ValueError("CC0 and CC1 must be positive")
        if not 0.0 < self.speed_factor <= 1.0:
            raise ValueError("speed_factor must lie in (0, 1]")
        if not self.CC8 >= self.CC9 > 0:
            raise ValueError("need CC8 >= CC9 > 0")
        if not 0.0 <= self.driver_random <= 1.0:
            raise ValueError("driver_random must lie in [0, 1]")

    def max_accel(self, v: float) -> float:
        """Free-driving acceleration capacity, CC8 at rest to CC9 at 80 km/h."""
        frac = min(max(v, 0.0), KMH_80) / KMH_80
        return self.CC8 + (self.CC9 - self.CC8) * frac


@dataclass(frozen=True)
class IdmParams:
    a0: float = 1.52
    b0: float = 3.24
    T: float = 1.02
    s0: float = 10.0
    delta: float = 4.0
    v0: float = 22.3

    def __post_init__(self):
        if min(self.a0, self.b0, self.T, self.s0, self.v0) <= 0:
            raise ValueError("IDM parameters must be positive")
        if self.delta < 1:
            raise ValueError("delta must be at least 1")


def _from_config(cls, cfg: Mapping[str, str] | None, prefix: str):
    base = cls()
    if not cfg:
        return base
    keyed = {k.lower(): v for k, v in cfg.items()}
    over = {f.name: float(keyed[(prefix + f.name).lower()]) for f in fields(cls)
            if (prefix + f.name).lower() in keyed}
    return replace(base, **over)


def wie99_from_config(cfg: Mapping[str, str] | None = None) -> Wie99Params:
    return _from_config(Wie99Params, cfg, "wie_")


def idm_from_config(cfg: Mapping[str, str] | None = None) -> IdmParams:
    return _from_config(IdmParams, cfg, "idm_")


class Wie99Thresholds(NamedTuple):
    sdxc: float   # minimum following distance
    sdxo: float   # maximum following distance
    sdxv: float   # approach (perception) distance
    sdvc: float   # closing speed-difference threshold
    sdvo: float   # opening speed-difference threshold


def wie99_thresholds(v: float, v_r: float, a_r: float, dx: float, p: Wie99Params) -> Wie99Thresholds:
    dv = v_r - v
    if dv >= 0 or a_r < -1.0:
        v_slower = v
    else:
        v_slower = v_r + dv * (p.driver_random - 0.5)
    sdxc = p.CC0 + p.CC1 * max(v_slower, 0.0)
    sdxo = sdxc + p.CC2
    sdxv = sdxo + p.CC3 * (dv - p.CC4)
    # perception of speed differences degrades with distance
    sdv = p.CC6 * 1e-4 * dx * dx
    sdvc = p.CC4 - sdv if v_r > 0 else 0.0
    sdvo = sdv + p.CC5 if v_r > p.CC5 else sdv
    return Wie99Thresholds(sdxc, sdxo, sdxv, sdvc, sdvo)


def wie99_accel(ego: VehicleState, pv: VehicleState, ds: float, p: Wie99Params,
                fs: FollowingState = FollowingState.FREE,
                v_desired: float = 22.3) -> tuple[float, FollowingState]:
    """One Wiedemann 99 decision for the ego behind ``pv`` at bumper gap ``ds``.

    ``fs`` is accepted for interface symmetry; the regime is recomputed from
    the thresholds every call and the previous acceleration ``ego.a`` carries
    the following-mode memory.
    """
    if ds <= 0:
        raise ValueError(f"non-positive gap {ds:.3f} m: collision")
    v, v_r, a_r = ego.v, pv.v, pv.a
    dv = v_r - v
    th = wie99_thresholds(v, v_r, a_r, ds, p)
    a_free = p.max_accel(v)
    if dv < th.sdvo and ds <= th.sdxc:
        acc = 0.0
        if dv < 0:
            if ds > p.CC0:
                acc = min(a_r + dv * dv / (p.CC0 - ds), 0.0)
            else:
                acc = min(a_r + 0.5 * (dv - th.sdvo), 0.0)
        if acc > -p.CC7:
            acc = -p.CC7
        else:
            acc = max(acc, -10.0 + 0.5 * math.sqrt(max(v, 0.0)))
        return acc, FollowingState.EMERGENCY
    if dv < th.sdvc and ds < th.sdxv:
        acc = max(0.5 * dv * dv / (th.sdxc - ds - 0.1), -10.0 + 0.5 * math.sqrt(max(v, 0.0)))
        return acc, FollowingState.CLOSING
    if dv < th.sdvo and ds < th.sdxo:
        # oscillate around the desired distance with amplitude CC7
        acc = -p.CC7 if ego.a <= 0 else p.CC7
        if v >= v_desired and acc > 0:
            acc = -p.CC7
        return acc, FollowingState.FOLLOWING
    # relax toward the desired speed over about one second
    return min(a_free, max(v_desired - v, COMFORT_DECEL)), FollowingState.FREE


def idm_accel(v: float, dv: float, ds: float, p: IdmParams, v0: float | None = None) -> float:
    """IDM command with closing speed ``dv = v - v_pv``; ``s*/ds`` unsquared."""
    if ds <= 0:
        raise ValueError(f"non-positive gap {ds:.3f} m: collision")
    v0 = p.v0 if v0 is None else v0
    s_star = p.s0 + max(0.0, p.T * v + v * dv / (2.0 * math.sqrt(p.a0 * p.b0)))
    acc = p.a0 * (1.0 - (max(v, 0.0) / v0) ** p.delta - s_star / ds)
    return max(acc, -3.0 * p.b0)


def apply_speed_limit(u: float, ego: VehicleState, track: TrackMap, lead_time: float = 0.0) -> float:
    """Clamp ``u`` to ``a_c`` while the ego is above the approach envelope of a
    slower zone ahead.

    ``lead_time`` (the actuator lag) looks the envelope up ``v * lead_time``
    further ahead.  While approaching a slower zone the check uses the speed
    the vehicle settles toward once braking takes over,
    ``v + (a - a_c) * lead_time``, rather than the current speed.
    """
    a_c = track.comfortable_decel
    look = ego.s + max(ego.v, 0.0) * lead_time
    env = track.envelope_limit(look, a_c)
    v_check = ego.v
    if env < track.limit_at(look):
        v_check += max(ego.a - a_c, 0.0) * lead_time
    if v_check > env + 1e-9:
        return min(u, a_c)
    return u


@dataclass
class WieDriver:
    params: Wie99Params = Wie99Params()
    state: FollowingState = FollowingState.FREE

    def command(self, ego: VehicleState, pv: VehicleState, gap: float, v_desired: float) -> float:
        u, self.state = wie99_accel(ego, pv, gap, self.params, self.state, v_desired)
        return u


@dataclass
class IdmDriver:
    params: IdmParams = IdmParams()

    def command(self, ego: VehicleState, pv: VehicleState, gap: float, v_desired: float) -> float:
        return idm_accel(ego.v, ego.v - pv.v, gap, self.params, v0=v_desired)
