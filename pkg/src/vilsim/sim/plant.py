"""Lagged double-integrator plant stepped at the simulation tick."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from ..mpc import discretize
from ..track import TrackMap, VehicleState

TICK = 0.1
TAU_A = 0.275


@dataclass
class PlantState:
    state: VehicleState
    u: float = 0.0


@lru_cache(maxsize=16)
def _zoh(tau_a: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    m = discretize(tau_a, dt)
    return m.A_d, m.B_d


def integrate_arrays(s, v, a, u, dt: float = TICK, tau_a: float = TAU_A):
    """Vectorized exact-hold step for many vehicles; returns ``(ds, v, a)``.

    Vehicles do not reverse: a speed that would turn negative is clamped to
    zero, travel is clamped non-negative and the lag state cannot stay
    negative at standstill.
    """
    A, B = _zoh(tau_a, dt)
    ds = A[0, 1] * v + A[0, 2] * a + B[0] * u
    v_new = A[1, 1] * v + A[1, 2] * a + B[1] * u
    a_new = A[2, 2] * a + B[2] * u
    stopped = v_new < 0.0
    if np.any(stopped):
        v_new = np.where(stopped, 0.0, v_new)
        a_new = np.where(stopped, np.maximum(a_new, 0.0), a_new)
        ds = np.maximum(ds, 0.0)
    return ds, v_new, a_new


def plant_integrate(p: PlantState, u: float, dt: float = TICK, track: TrackMap | None = None,
                    tau_a: float = TAU_A) -> PlantState:
    """Advance one vehicle by ``dt`` with command ``u`` held over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    st = p.state
    ds, v, a = integrate_arrays(np.array([st.s]), np.array([st.v]), np.array([st.a]),
                                np.array([u]), dt, tau_a)
    new = replace(st, v=float(v[0]), a=float(a[0]), timestamp=st.timestamp + dt, brake_on=u < 0)
    if track is not None:
        new = replace(new, s=st.s).advance(float(ds[0]), track)
    else:
        new = replace(new, s=st.s + float(ds[0]))
    return PlantState(new, u)
