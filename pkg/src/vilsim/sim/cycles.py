"""Drive-cycle loading and adaptation to the closed circuit."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..track import TrackMap
from .plant import TICK

CYCLE_SCALES = {"us06": 0.6, "udds": 0.8}
RECOVERY_ACCEL = 2.0


@dataclass
class DriveCycle:
    t: np.ndarray
    v: np.ndarray
    scale: float = 1.0
    name: str = ""
    s: np.ndarray | None = None    # odometer along the track, when placed on one

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.t.size == 0 or self.t.size != self.v.size:
            raise ValueError("cycle needs matching, non-empty time and speed samples")
        if abs(self.t[0]) > 1e-9 or np.any(np.diff(self.t) <= 0):
            raise ValueError("cycle time must start at 0 and increase strictly")
        if np.any(self.v < 0):
            raise ValueError("cycle speed must be non-negative")

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def speed_at(self, t):
        return np.interp(t, self.t, self.v)

    def position_at(self, t):
        if self.s is None:
            raise ValueError("cycle has no position track; call modify_cycle_for_track")
        return np.interp(t, self.t, self.s)


def cycle_path(name: str) -> Path:
    """Path of a bundled EPA cycle (``us06`` or ``udds``)."""
    ref = resources.files("vilsim.data") / f"{name.lower()}.csv"
    with resources.as_file(ref) as p:
        return Path(p)


def load_cycle(file: str | Path, scale: float = 1.0, tick: float | None = TICK,
               name: str | None = None) -> DriveCycle:
    """Read a ``t_s,v_mps`` CSV, scale speeds and resample onto the tick grid."""
    path = Path(file)
    if not path.exists():
        raise FileNotFoundError(f"drive cycle file not found: {path}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    with path.open(newline="") as fh:
        rows = [r for r in csv.DictReader(fh)]
    if not rows:
        raise ValueError(f"drive cycle {path} is empty")
    try:
        t = np.array([float(r["t_s"]) for r in rows])
        v = np.array([float(r["v_mps"]) for r in rows])
    except KeyError as exc:
        raise ValueError(f"drive cycle {path} needs columns t_s,v_mps") from exc
    if np.any(np.diff(t) <= 0):
        raise ValueError("drive cycle time is not strictly increasing")
    if np.any(v < 0):
        raise ValueError("drive cycle contains negative speed")
    t = t - t[0]
    v = v * scale
    if tick is not None:
        grid = np.round(np.arange(0.0, t[-1] + 0.5 * tick, tick), 10)
        v = np.interp(grid, t, v)
        t = grid
    return DriveCycle(t=t, v=v, scale=scale, name=name or path.stem)


def modify_cycle_for_track(c: DriveCycle, track: TrackMap, s0: float = 0.0,
                           laps: float = 3.0, margin: float = 1.0) -> DriveCycle:
    """Cap the cycle by the approach envelope along the integrated position.

    The cycle is looped until the PV has covered ``laps + margin`` circuits.
    Where the cap releases, the PV regains the nominal profile at no more than
    ``RECOVERY_ACCEL``.  Positions are integrated with the trapezoid rule.
    """
    dt = float(np.median(np.diff(c.t))) if c.t.size > 1 else TICK
    target = (laps + margin) * track.circuit_length
    if float(np.trapezoid(c.v, c.t)) <= 0:
        raise ValueError("cycle never moves")
    v_prev = min(float(c.v[0]), track.envelope_limit(s0))
    ts, vs, ss = [0.0], [v_prev], [s0]
    s, k = s0, 0
    behind = v_prev < float(c.v[0])
    period = c.duration + dt
    while s - s0 < target:
        k += 1
        t = k * dt
        v_nom = float(c.speed_at(math.fmod(t, period)))
        v_new = min(v_nom, track.envelope_limit(s + v_prev * dt))
        if behind and v_new > v_prev:
            v_new = min(v_new, v_prev + RECOVERY_ACCEL * dt)
        behind = v_new < v_nom - 1e-9
        s += 0.5 * (v_prev + v_new) * dt
        ts.append(t)
        vs.append(v_new)
        ss.append(s)
        v_prev = v_new
    return DriveCycle(t=np.array(ts), v=np.array(vs), scale=c.scale, name=c.name, s=np.array(ss))
