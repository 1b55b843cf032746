"""Client side: the ego plant and its controller, fed by server broadcasts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..track import TrackMap, VehicleState
from ..wire import OK, ProbeData, Sim2V, V2Sim, V2V
from .controllers import Controller, MpcVehicleController, Observation
from .plant import PlantState, plant_integrate
from .world import EGO, EPOCH, plan_to_v2v, v2v_to_plan


@dataclass
class EgoTrace:
    t: list = field(default_factory=list)
    s: list = field(default_factory=list)
    v: list = field(default_factory=list)
    a: list = field(default_factory=list)
    u: list = field(default_factory=list)
    lap: list = field(default_factory=list)

    def append(self, t, st: VehicleState, u):
        self.t.append(t)
        self.s.append(st.s)
        self.v.append(st.v)
        self.a.append(st.a)
        self.u.append(u)
        self.lap.append(st.lap)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(getattr(self, k), dtype=float) for k in ("t", "s", "v", "a", "u", "lap")}


class EgoClient:
    """Owns the ego plant; one :meth:`tick` per server broadcast."""

    def __init__(self, controller: Controller, track: TrackMap, tick: float = 0.1,
                 vehicle_id: int = EGO, start: VehicleState | None = None):
        self.controller = controller
        self.track = track
        self.tick_s = tick
        self.vehicle_id = vehicle_id
        self.plant = PlantState(start or VehicleState())
        self.t = 0.0
        self._pv_prev: tuple[int, float] | None = None
        self.latest_plan: V2V | None = None
        self.fallbacks = 0
        self.clock = None          # latest ClockSync estimate, networked mode only
        self.trace = EgoTrace()

    @property
    def state(self) -> VehicleState:
        return self.plant.state

    @property
    def odometer(self) -> float:
        return self.state.odometer(self.track)

    def probe(self) -> ProbeData:
        st = self.state
        x, y, heading = self.track.xy(st.s)
        return ProbeData(max(st.v, 0.0), x, y, heading, int(st.brake_on), EPOCH + self.t)

    def _observe(self, msg: Sim2V) -> Observation | None:
        ahead = [p for p in msg.probes if p.vehicle_id != self.vehicle_id and p.dx > 0]
        if not ahead:
            return None
        pv = min(ahead, key=lambda p: p.dx)
        if self._pv_prev is not None and self._pv_prev[0] == pv.vehicle_id:
            a_r = (pv.v - self._pv_prev[1]) / self.tick_s
        else:
            a_r = 0.0
        self._pv_prev = (pv.vehicle_id, pv.v)
        plan = None
        if self.latest_plan is not None and self.latest_plan.vehicle_id == pv.vehicle_id:
            plan = v2v_to_plan(self.latest_plan)
        return Observation(t=self.t, ego=self.state, odometer=self.odometer,
                           gap=pv.dx - self.track.vehicle_length, pv_v=pv.v, pv_a=a_r,
                           pv_s=self.track.wrap(self.state.s + pv.dx), pv_plan=plan)

    def tick(self, sim2v: Sim2V | None, v2v: V2V | None = None) -> tuple[float, V2Sim, V2V | None]:
        """Compute the command, step the plant and build the outgoing frames.

        Without a fresh broadcast the ego brakes at the comfortable rate.
        """
        if v2v is not None:
            self.latest_plan = v2v
        obs = self._observe(sim2v) if sim2v is not None else None
        if obs is None:
            u = self.track.comfortable_decel
            self.fallbacks += 1
            out_plan = None
        else:
            u = float(self.controller.command(obs, self.track))
            plan = self.controller.plan()
            out_plan = plan_to_v2v(replace(plan, vehicle_id=self.vehicle_id)) if plan is not None else None
        self.trace.append(self.t, self.state, u)
        self.plant = plant_integrate(self.plant, u, self.tick_s, self.track)
        self.t = round(self.t + self.tick_s, 10)
        self.plant.state.timestamp = EPOCH + self.t
        heading = self.track.xy(self.state.s)[2]
        self.plant.state.heading = heading
        return u, V2Sim(self.vehicle_id, self.probe(), OK), out_plan

    @property
    def solve_times(self) -> list[float]:
        if isinstance(self.controller, MpcVehicleController):
            return self.controller.solve_times
        return []


def client_tick(client: EgoClient, sim2v: Sim2V | None, v2v: V2V | None = None):
    """Functional entry point: returns ``(u, V2Sim, V2V | None)``."""
    return client.tick(sim2v, v2v)
