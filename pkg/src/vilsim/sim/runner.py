"""Run a scenario end to end, either in one process or over localhost UDP."""
from __future__ import annotations

import csv
import logging
import math
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..track import TrackMap, default_track
from ..wire import (OK, ClockPoll, Sim2V, Subscription, UdpEndpoint, V2Sim, V2V, decode,
                    encode, ntp_update)
from .client import EgoClient
from .controllers import ControllerParams
from .scenario import ScenarioConfig
from .world import EGO, World

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    """Per-tick arrays of shape ``(ticks, vehicles)`` plus run bookkeeping."""
    cfg: ScenarioConfig
    track: TrackMap
    tick: np.ndarray
    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    u: np.ndarray
    gap: np.ndarray
    zone: np.ndarray
    lap: np.ndarray
    collisions: int
    min_gap: float
    solve_times: list = field(default_factory=list)
    wall_time: float = 0.0
    stale_ticks: int = 0
    completed: bool = False

    @property
    def t(self) -> np.ndarray:
        return self.tick * self.cfg.tick

    @property
    def n_ticks(self) -> int:
        return self.tick.size

    @property
    def ego_lap_ticks(self) -> np.ndarray:
        """Tick indices at which the ego starts each lap (lap 0 starts at tick 0)."""
        lap = self.lap[:, EGO]
        return np.concatenate([[0], np.flatnonzero(np.diff(lap) > 0) + 1])

    @property
    def lap_bounds(self) -> np.ndarray:
        """Lap start ticks, closed by the end tick when the final lap finished."""
        starts = self.ego_lap_ticks
        return np.append(starts, self.n_ticks) if self.completed else starts

    @property
    def speedup(self) -> float:
        return self.n_ticks * self.cfg.tick / self.wall_time if self.wall_time > 0 else float("inf")


def _result(world: World, client: EgoClient, wall: float) -> RunResult:
    arr = world.trace.arrays()
    ego = client.trace.arrays()
    n = arr["tick"].size
    # the client knows the ego's true acceleration and command
    arr["a"][:, EGO] = ego["a"][:n]
    arr["u"][:, EGO] = ego["u"][:n]
    solve = list(client.solve_times)
    for ctl in world.controllers.values():
        solve.extend(getattr(ctl, "solve_times", []))
    return RunResult(world.cfg, world.track, arr["tick"], arr["s"], arr["v"], arr["a"], arr["u"],
                     arr["gap"], arr["zone"].astype(int), arr["lap"].astype(int),
                     world.collisions, world.min_gap, solve, wall, client.fallbacks,
                     client.state.lap >= world.cfg.laps)


def _finished(world: World, client: EgoClient, t: float | None = None) -> bool:
    cfg = world.cfg
    t = world.t if t is None else t
    if client.state.lap >= cfg.laps or t >= cfg.time_limit - 1e-9:
        return True
    return world.cycle is not None and t >= world.cycle.duration - 1e-9


def _wire(msg):
    """Pass a message through the codec so loopback exercises the same bytes."""
    return decode(encode(msg))


def make_client(cfg: ScenarioConfig, track: TrackMap, world: World) -> EgoClient:
    ctl = world.params.make(cfg.controller, vehicle_id=EGO)
    return EgoClient(ctl, track, cfg.tick, EGO, start=world.state(EGO))


def run_loopback(cfg: ScenarioConfig, track: TrackMap | None = None,
                 params: ControllerParams | None = None, world: World | None = None) -> RunResult:
    """Deterministic single-process run through an in-memory channel."""
    track = track or default_track()
    world = world or World(cfg, track, params)
    client = make_client(cfg, track, world)
    start = time.perf_counter()
    while not _finished(world, client):
        world.deliver_plans()
        sim2v = _wire(world.sim2v(EGO))
        plan = world.pv_plan_for(EGO)
        _, v2sim, v2v = client.tick(sim2v, _wire(plan) if plan is not None else None)
        if v2v is not None:
            world.accept_v2v(_wire(v2v))
        ego = world.ego_from_v2sim(_wire(v2sim))
        world.step(ego)
    return _result(world, client, time.perf_counter() - start)


# -- networked mode --------------------------------------------------------

@dataclass
class ServerOutcome:
    trace: dict
    collisions: int
    min_gap: float
    solve_times: list


def serve(cfg: ScenarioConfig, port: int, host: str = "127.0.0.1", track: TrackMap | None = None,
          params: ControllerParams | None = None, timeout: float = 30.0, ready=None) -> ServerOutcome:
    """Run the server loop for one subscribed ego client until it unsubscribes.

    The world advances one tick per ego report; if none arrives within
    ``stale_after`` seconds the ego is extrapolated and flagged stale.
    """
    track = track or default_track()
    world = World(cfg, track, params)
    with UdpEndpoint(host, port) as ep:
        if ready is not None:
            ready.set()
        got = ep.recv(timeout)
        if got is None or not isinstance(got[0], Subscription) or got[0].sub_flag != 1:
            raise RuntimeError("no subscription received")
        addr = got[1]
        ep.send(got[0], addr)    # acknowledge
        logger.info("client %s subscribed", addr)
        # lockstep: each ego report is already stamped at the tick being
        # integrated, so there is no transport delay left to extrapolate over
        rtt = 0.0
        while True:
            world.deliver_plans()
            # the client acts on receipt of Sim2V, so the PV plan goes first
            plan = world.pv_plan_for(EGO)
            if plan is not None:
                ep.send(plan, addr)
            ep.send(world.sim2v(EGO), addr)
            ego, done = None, False
            deadline = time.monotonic() + cfg.stale_after
            while True:
                got = ep.recv(max(deadline - time.monotonic(), 0.0))
                if got is None:
                    break
                m = got[0]
                if isinstance(m, ClockPoll):
                    t1 = time.time()
                    ep.send(ClockPoll(m.vehicle_id, m.t0, t1, time.time()), addr)
                elif isinstance(m, V2V):
                    world.accept_v2v(m)
                elif isinstance(m, Subscription) and m.sub_flag == 0:
                    done = True
                    break
                elif isinstance(m, V2Sim):
                    ego = world.ego_from_v2sim(m)
                    break
            if done:
                break
            if ego is None:
                logger.warning("no ego update at t=%.1f s", world.t)
            world.step(ego, rtt, time.monotonic())
    solves = [x for c in world.controllers.values() for x in getattr(c, "solve_times", [])]
    return ServerOutcome(world.trace.arrays(), world.collisions, world.min_gap, solves)


def run_client(cfg: ScenarioConfig, server: tuple[str, int], track: TrackMap | None = None,
               params: ControllerParams | None = None, timeout: float = 30.0) -> EgoClient:
    """Subscribe to ``server``, drive the ego until the run ends, unsubscribe."""
    track = track or default_track()
    ref = World(cfg, track, params)
    client = make_client(cfg, track, ref)
    with UdpEndpoint("127.0.0.1" if server[0] in ("127.0.0.1", "localhost") else "0.0.0.0", 0) as ep:
        ep.send(Subscription(EGO, 1, 1, client.probe(), OK), server)
        if ep.recv(timeout) is None:
            raise RuntimeError("subscription not acknowledged")
        last_sync = -math.inf
        plan = None
        while not _finished(ref, client, client.t):
            if client.t - last_sync >= 1.0:
                ep.send(ClockPoll(EGO, time.time(), 0.0, 0.0), server)
                last_sync = client.t
            sim2v = None
            got = ep.recv(cfg.stale_after)
            while got is not None:
                m = got[0]
                if isinstance(m, ClockPoll):
                    client.clock = ntp_update(m.t0, m.t1, m.t2, time.time())
                elif isinstance(m, V2V):
                    plan = m
                elif isinstance(m, Sim2V):
                    sim2v = m
                    break
                got = ep.recv(cfg.stale_after)
            _, v2sim, v2v = client.tick(sim2v, plan)
            plan = None
            if v2v is not None:
                ep.send(v2v, server)
            ep.send(v2sim, server)
        ep.send(Subscription(EGO, 1, 0, client.probe(), OK), server)
    return client


def _serve_child(cfg, port, params, ready, out, timeout):
    try:
        out.put(("ok", serve(cfg, port, params=params, timeout=timeout, ready=ready)))
    except Exception as exc:   # reported to the parent
        out.put(("error", repr(exc)))


def run_networked(cfg: ScenarioConfig, port: int = 47001, params: ControllerParams | None = None,
                  timeout: float = 30.0) -> RunResult:
    """Server in a child process, ego client here, talking UDP on localhost.

    Both sides advance in lockstep on simulation time, so the result tracks
    loopback mode closely; the ego position does pass through the planar
    projection on the server.
    """
    track = default_track()
    ctx = mp.get_context("spawn")
    ready, out = ctx.Event(), ctx.Queue()
    proc = ctx.Process(target=_serve_child, args=(cfg, port, params, ready, out, timeout), daemon=True)
    proc.start()
    start = time.perf_counter()
    try:
        if not ready.wait(timeout):
            raise RuntimeError("server did not start")
        client = run_client(cfg, ("127.0.0.1", port), track, params, timeout)
        status, outcome = out.get(timeout=120.0)
    finally:
        proc.join(5.0)
        if proc.is_alive():
            proc.terminate()
    if status != "ok":
        raise RuntimeError(outcome)
    wall = time.perf_counter() - start
    arr = outcome.trace
    ego = client.trace.arrays()
    n = min(arr["tick"].size, ego["u"].size)
    arr = {k: val[:n] for k, val in arr.items()}
    arr["a"][:, EGO] = ego["a"][:n]
    arr["u"][:, EGO] = ego["u"][:n]
    return RunResult(cfg, track, arr["tick"], arr["s"], arr["v"], arr["a"], arr["u"], arr["gap"],
                     arr["zone"].astype(int), arr["lap"].astype(int), outcome.collisions, outcome.min_gap,
                     list(client.solve_times) + outcome.solve_times, wall, client.fallbacks,
                     client.state.lap >= cfg.laps)


def write_trace(result: RunResult, path: str | Path) -> Path:
    """Long-format CSV: tick, vehicle_id, s, v, a, u, gap, zone."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nt, nv = result.s.shape
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "vehicle_id", "s", "v", "a", "u", "gap", "zone"])
        for k in range(nt):
            for i in range(nv):
                w.writerow([int(result.tick[k]), i, f"{result.s[k, i]:.4f}", f"{result.v[k, i]:.4f}",
                            f"{result.a[k, i]:.4f}", f"{result.u[k, i]:.4f}", f"{result.gap[k, i]:.4f}",
                            int(result.zone[k, i])])
    return path
