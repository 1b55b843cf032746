"""Server side: the ring of virtual vehicles around one client-driven ego."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..track import TrackMap, VehicleState
from ..wire import (VEHICLE_CAV, VEHICLE_HUMAN, DelayedQueue, Sim2V, SimProbe, V2V,
                    V2Sim, extrapolate)
from .controllers import Controller, ControllerParams, MpcVehicleController, Observation, Plan
from .cycles import CYCLE_SCALES, DriveCycle, cycle_path, load_cycle, modify_cycle_for_track
from .plant import TAU_A, integrate_arrays
from .scenario import ScenarioConfig

logger = logging.getLogger(__name__)

EGO = 0
EPOCH = 1.7e9    # wall-clock origin for message time stamps


def plan_to_v2v(plan: Plan, t_epoch: float = EPOCH) -> V2V:
    return V2V(plan.vehicle_id, t_epoch + plan.t0, tuple(plan.s), plan.v_end)


def v2v_to_plan(m: V2V, dt: float = 1.0, t_epoch: float = EPOCH) -> Plan:
    return Plan(m.vehicle_id, m.timestamp - t_epoch, np.asarray(m.s, dtype=float), m.v_end, dt)


@dataclass
class TraceBuffer:
    """Per-tick, per-vehicle samples: tick, s, v, a, u, gap, zone, lap."""
    rows: dict[str, list] = field(default_factory=lambda: {k: [] for k in
                                                            ("tick", "s", "v", "a", "u", "gap", "zone", "lap")})

    def append(self, tick: int, s, v, a, u, gap, zone, lap):
        r = self.rows
        r["tick"].append(tick)
        for key, val in (("s", s), ("v", v), ("a", a), ("u", u), ("gap", gap), ("zone", zone), ("lap", lap)):
            r[key].append(np.array(val, dtype=float, copy=True))

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"tick": np.array(self.rows["tick"], dtype=int)}
        for k in ("s", "v", "a", "u", "gap", "zone", "lap"):
            out[k] = np.vstack(self.rows[k]) if self.rows[k] else np.zeros((0, 0))
        return out


class World:
    """State of every vehicle on the server; vehicle 0 is the client's ego.

    Vehicles are ordered along the direction of travel, so vehicle ``i`` follows
    vehicle ``i + 1`` (modulo the ring).
    """

    def __init__(self, cfg: ScenarioConfig, track: TrackMap, params: ControllerParams | None = None,
                 cycle: DriveCycle | None = None):
        self.cfg = cfg
        self.track = track
        n = cfg.vehicle_count
        self.n = n
        self.rng = np.random.default_rng(cfg.seed)
        self.t = 0.0
        self.tick_index = 0
        L = track.circuit_length
        self.lap = np.zeros(n, dtype=int)
        self.v = np.zeros(n)
        self.a = np.zeros(n)
        self.u = np.zeros(n)
        self.types = [VEHICLE_HUMAN] * n
        self.controllers: dict[int, Controller] = {}
        self.cycle = None
        self.params = params = params or ControllerParams()
        if cfg.is_cycle:
            if cycle is None:
                path = cfg.cycle_file or cycle_path(cfg.kind)
                raw = load_cycle(path, CYCLE_SCALES.get(cfg.kind, 1.0), tick=cfg.tick, name=cfg.kind)
                s_pv = track.vehicle_length + params.mpc_u.d_min
                cycle = modify_cycle_for_track(raw, track, s0=s_pv, laps=cfg.laps, margin=1.0)
            self.cycle = cycle
            self.s = np.array([0.0, track.wrap(float(cycle.s[0]))])
            self.v[1] = float(cycle.v[0])
            self.types[1] = VEHICLE_CAV if cfg.controller == "mpc-c" else VEHICLE_HUMAN
        else:
            self.s = np.arange(n) * (L / n)
            for i in range(1, n):
                if cfg.controller == "mpc-c" and i <= cfg.n_cav_string:
                    kind = "mpc-c" if i < cfg.n_cav_string else "mpc-u"
                    self.controllers[i] = params.make(kind, vehicle_id=i)
                    self.types[i] = VEHICLE_CAV
                else:
                    x = float(self.rng.uniform(0.0, 1.0))
                    f = float(self.rng.uniform(cfg.speed_factor_min, 1.0))
                    self.controllers[i] = params.make("wie", wie=replace(params.wie, driver_random=x,
                                                                          speed_factor=f))
        self.types[EGO] = VEHICLE_CAV if cfg.controller.startswith("mpc") else VEHICLE_HUMAN
        self.v_prev = self.v.copy()
        self.v2v = DelayedQueue(cfg.v2v_delay)
        self.plans: dict[int, Plan] = {}
        self.ego_last_update = 0.0
        self.ego_stale = False
        self.collisions = 0
        self.min_gap = math.inf
        self._in_contact = np.zeros(n, dtype=bool)
        self.trace = TraceBuffer()

    # -- geometry -----------------------------------------------------------
    def odometer(self, i: int) -> float:
        return self.lap[i] * self.track.circuit_length + self.s[i]

    def gaps(self) -> np.ndarray:
        L = self.track.circuit_length
        ahead = np.roll(self.s, -1)
        return np.mod(ahead - self.s, L) - self.track.vehicle_length

    def state(self, i: int) -> VehicleState:
        _, _, heading = self.track.xy(self.s[i])
        return VehicleState(s=float(self.s[i]), v=float(self.v[i]), a=float(self.a[i]), heading=heading,
                            lap=int(self.lap[i]), brake_on=bool(self.u[i] < 0), timestamp=self.t)

    def pv_accel(self, j: int) -> float:
        return float(self.v[j] - self.v_prev[j]) / self.cfg.tick

    # -- messages -----------------------------------------------------------
    def sim2v(self, receiver: int = EGO) -> Sim2V:
        """Surrounding vehicles relative to ``receiver``; ``dx`` is the forward
        arc-length offset, centre to centre."""
        L = self.track.circuit_length
        ts = EPOCH + self.t
        probes = []
        for j in range(self.n):
            if j == receiver:
                continue
            dx = float(np.mod(self.s[j] - self.s[receiver], L))
            heading = self.track.xy(self.s[j])[2]
            probes.append(SimProbe(j, self.types[j], float(max(self.v[j], 0.0)), dx, 0.0, heading,
                                   int(self.u[j] < 0), ts))
        return Sim2V(tuple(probes))

    def pv_plan_for(self, receiver: int) -> V2V | None:
        plan = self.plans.get((receiver + 1) % self.n)
        return plan_to_v2v(plan) if plan is not None else None

    def deliver_plans(self):
        for plan in self.v2v.pop_ready(self.t):
            self.plans[plan.vehicle_id] = plan

    def accept_v2v(self, m: V2V):
        self.v2v.push(v2v_to_plan(m, self.params.mpc_c.dt_h), self.t)

    # -- one tick -----------------------------------------------------------
    def _virtual_commands(self):
        gaps = self.gaps()
        for i, ctl in self.controllers.items():
            j = (i + 1) % self.n
            obs = Observation(t=self.t, ego=self.state(i), odometer=self.odometer(i), gap=float(gaps[i]),
                              pv_v=float(self.v[j]), pv_a=self.pv_accel(j), pv_s=float(self.s[j]),
                              pv_plan=self.plans.get(j))
            self.u[i] = ctl.command(obs, self.track)
            if isinstance(ctl, MpcVehicleController) and ctl.plan() is not None:
                self.v2v.push(ctl.plan(), self.t)
        if self.cycle is not None:
            self.v2v.push(self._cycle_plan(), self.t)

    def _cycle_plan(self) -> Plan:
        N, dt = self.params.mpc_c.N, self.params.mpc_c.dt_h
        tq = self.t + dt * np.arange(1, N + 1)
        s = np.interp(tq, self.cycle.t, self.cycle.s)
        v_end = float(np.interp(tq[-1], self.cycle.t, self.cycle.v))
        return Plan(1, self.t, s, v_end, dt)

    def _record(self, ego_u: float):
        u = self.u.copy()
        u[EGO] = ego_u
        zone = [self.track.zone_index(x) for x in self.s]
        self.trace.append(self.tick_index, self.s, self.v, self.a, u, self.gaps(), zone, self.lap)

    def step(self, ego: VehicleState | None, rtt: float = 0.0, wall_now: float | None = None) -> None:
        """Advance every virtual vehicle one tick and inject the ego update."""
        cfg, track = self.cfg, self.track
        self._virtual_commands()
        self._record(np.nan)
        idx = np.array(sorted(self.controllers), dtype=int)
        v_before = self.v.copy()
        if idx.size:
            ds, v_new, a_new = integrate_arrays(self.s[idx], self.v[idx], self.a[idx], self.u[idx],
                                                cfg.tick, TAU_A)
            raw = self.s[idx] + ds
            self.lap[idx] += np.floor(raw / track.circuit_length).astype(int)
            self.s[idx] = np.mod(raw, track.circuit_length)
            self.v[idx], self.a[idx] = v_new, a_new
        if self.cycle is not None:
            t_next = self.t + cfg.tick
            odo = float(np.interp(t_next, self.cycle.t, self.cycle.s))
            v_new = float(np.interp(t_next, self.cycle.t, self.cycle.v))
            self.a[1] = (v_new - self.v[1]) / cfg.tick
            self.v[1] = v_new
            self.lap[1] = int(odo // track.circuit_length)
            self.s[1] = track.wrap(odo)
        self._inject_ego(ego, rtt, wall_now)
        self.v_prev = v_before
        self.t = round(self.t + cfg.tick, 10)
        self.tick_index += 1
        self._check_contacts()

    def _inject_ego(self, ego: VehicleState | None, rtt: float, wall_now: float | None):
        L = self.track.circuit_length
        if ego is None:
            # stale client: hold course at the last known speed
            if wall_now is not None and wall_now - self.ego_last_update > self.cfg.stale_after:
                if not self.ego_stale:
                    logger.warning("ego update stale for more than %.1f s", self.cfg.stale_after)
                self.ego_stale = True
            raw = self.s[EGO] + self.v[EGO] * self.cfg.tick
        else:
            self.ego_stale = False
            if wall_now is not None:
                self.ego_last_update = wall_now
            raw = extrapolate(ego.s, ego.v, rtt)
            self.a[EGO] = (ego.v - self.v[EGO]) / self.cfg.tick
            self.v[EGO] = ego.v
            if raw - self.s[EGO] < -0.5 * L:
                raw += L
        if raw >= L:
            self.lap[EGO] += 1
        self.s[EGO] = self.track.wrap(raw)

    def _check_contacts(self):
        g = self.gaps()
        self.min_gap = min(self.min_gap, float(g.min()))
        touching = g <= 0.0
        new = touching & ~self._in_contact
        if new.any():
            for i in np.flatnonzero(new):
                logger.warning("collision: vehicle %d reached vehicle %d at t=%.1f s (gap %.2f m)",
                               i, (i + 1) % self.n, self.t, g[i])
            self.collisions += int(new.sum())
        self._in_contact = touching

    def ego_from_v2sim(self, m: V2Sim) -> VehicleState:
        p = m.probe
        s = self.track.project(p.x, p.y)
        return VehicleState(s=s, v=p.v, heading=p.heading, brake_on=bool(p.brake_on),
                            timestamp=p.timestamp)


def server_tick(world: World, ego_update: V2Sim | None = None, rtt: float = 0.0,
                wall_now: float | None = None) -> World:
    """Advance ``world`` by one tick using the latest ego report, if any."""
    ego = world.ego_from_v2sim(ego_update) if ego_update is not None else None
    world.step(ego, rtt, wall_now)
    return world
