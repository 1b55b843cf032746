"""Longitudinal controllers behind one interface, for virtual vehicles and the ego."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..drivers import IdmDriver, IdmParams, WieDriver, Wie99Params, apply_speed_limit
from ..mpc import (MPC_C, MPC_U, MpcController, MpcParams, MpcResult, moving_speed_limit,
                   preview_connected)
from ..track import TrackMap, VehicleState
from .plant import TAU_A

CONTROLLERS = ("wie", "idm", "mpc-u", "mpc-c")


@dataclass
class Plan:
    """A broadcast trajectory: odometer positions at ``t0 + i*dt`` for i = 1..n."""
    vehicle_id: int
    t0: float
    s: np.ndarray
    v_end: float
    dt: float = 1.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(1, self.s.size + 1)


@dataclass
class Observation:
    t: float
    ego: VehicleState
    odometer: float
    gap: float                  # bumper-to-bumper
    pv_v: float
    pv_a: float
    pv_s: float                 # PV track position
    pv_plan: Plan | None = None


class Controller:
    kind = "base"
    emits_plan = False

    def command(self, obs: Observation, track: TrackMap) -> float:
        raise NotImplementedError

    def plan(self) -> Plan | None:
        return None


@dataclass
class WieController(Controller):
    params: Wie99Params = field(default_factory=Wie99Params)
    lead_time: float = TAU_A
    kind = "wie"

    def __post_init__(self):
        self.driver = WieDriver(self.params)

    def command(self, obs: Observation, track: TrackMap) -> float:
        pv = VehicleState(s=obs.pv_s, v=obs.pv_v, a=obs.pv_a)
        v_des = self.params.speed_factor * track.limit_at(obs.ego.s)
        u = self.driver.command(obs.ego, pv, max(obs.gap, 1e-3), v_des)
        return apply_speed_limit(u, obs.ego, track, self.lead_time)


@dataclass
class IdmController(Controller):
    params: IdmParams = field(default_factory=IdmParams)
    lead_time: float = TAU_A
    kind = "idm"

    def __post_init__(self):
        self.driver = IdmDriver(self.params)

    def command(self, obs: Observation, track: TrackMap) -> float:
        pv = VehicleState(s=obs.pv_s, v=obs.pv_v, a=obs.pv_a)
        u = self.driver.command(obs.ego, pv, max(obs.gap, 1e-3), track.limit_at(obs.ego.s))
        return apply_speed_limit(u, obs.ego, track, self.lead_time)


@dataclass
class MpcVehicleController(Controller):
    """MPC-U or MPC-C; the connected variant falls back to prediction until a
    PV plan has been received."""
    params: MpcParams = MPC_U
    vehicle_id: int = 0
    connected: bool = False
    lead_time: float = TAU_A
    emits_plan = True

    def __post_init__(self):
        self.mpc = MpcController(self.params)
        self.kind = "mpc-c" if self.connected else "mpc-u"
        self._plan: Plan | None = None
        self.last: MpcResult | None = None
        self.step_times: list[float] = []    # whole step: preview, QP, plan

    def _preview(self, obs: Observation, track: TrackMap):
        p = self.params
        length = track.vehicle_length
        if self.connected and obs.pv_plan is not None:
            plan = obs.pv_plan
            # plan positions are the PV's odometer; the lap offset between the
            # two odometers is recovered from the measured gap
            pv_odo_est = plan.s[0] - obs.pv_v * (plan.times[0] - obs.t)
            here = obs.odometer + obs.gap + length
            k = round((pv_odo_est - here) / track.circuit_length)
            shift = k * track.circuit_length + obs.odometer + length
            return preview_connected(plan.times, plan.s - shift, plan.v_end, obs.t, obs.gap, p)
        v_bar_pv = track.limit_at(obs.pv_s)
        return self.mpc.preview_from_state(obs.gap, obs.pv_v, obs.pv_a, v_bar_pv)

    def command(self, obs: Observation, track: TrackMap) -> float:
        t0 = time.perf_counter()
        p = self.params
        preview = self._preview(obs, track)
        v_bar = moving_speed_limit(obs.ego, track, p.N, p.dt_h)
        res = self.mpc.step(obs.ego, preview, v_bar)
        self.last = res
        self._plan = Plan(self.vehicle_id, obs.t, obs.odometer + res.s_plan, res.v_terminal, p.dt_h)
        u = apply_speed_limit(res.u0, obs.ego, track, self.lead_time)
        self.step_times.append(time.perf_counter() - t0)
        return u

    def plan(self) -> Plan | None:
        return self._plan

    @property
    def solve_times(self) -> list[float]:
        return self.step_times


@dataclass(frozen=True)
class ControllerParams:
    """Parameter sets for every controller family in a run."""
    wie: Wie99Params = field(default_factory=Wie99Params)
    idm: IdmParams = field(default_factory=IdmParams)
    mpc_u: MpcParams = MPC_U
    mpc_c: MpcParams = MPC_C

    def make(self, kind: str, vehicle_id: int = 0, wie: Wie99Params | None = None) -> Controller:
        return make_controller(kind, vehicle_id, wie or self.wie, self.idm, self.mpc_u, self.mpc_c)


def make_controller(kind: str, vehicle_id: int = 0, wie: Wie99Params | None = None,
                    idm: IdmParams | None = None, mpc_u: MpcParams = MPC_U,
                    mpc_c: MpcParams = MPC_C) -> Controller:
    kind = kind.lower()
    if kind == "wie":
        return WieController(wie or Wie99Params())
    if kind == "idm":
        return IdmController(idm or IdmParams())
    if kind == "mpc-u":
        return MpcVehicleController(mpc_u, vehicle_id, connected=False)
    if kind == "mpc-c":
        return MpcVehicleController(mpc_c, vehicle_id, connected=True)
    raise ValueError(f"unknown controller {kind!r}; choose from {CONTROLLERS}")
