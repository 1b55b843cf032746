"""Anticipative car-following MPC with connected and chance-constrained variants.

The ego model is a double integrator whose acceleration lags the command
through a first-order filter.  The optimal control problem is condensed onto
the input sequence plus four soft-constraint slacks and handed to
:class:`vilsim.qpsolver.QPSolver`.

Positions inside one MPC step are expressed in the ego frame: the ego sits at
``s = 0`` and preceding-vehicle positions are bumper-to-bumper offsets, so the
collision constraint ``s(i) <= s_alpha(i) - d_min`` is a true gap bound.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import ndtri

from .qpsolver import OcpProblem, QPSolver, QpSolution
from .track import TrackMap, VehicleState

logger = logging.getLogger(__name__)

# max_i b(i) = 9.5 m for the lag model with the table parameters; see calibrate_sigma
CALIBRATED_SIGMA_A = 10.839865039813258


@dataclass(frozen=True)
class MpcParams:
    N: int = 16
    q_a: float = 2050.0
    q_g: float = 1.0
    T: float = 1.3
    d_r: float = 2.0
    d_min: float = 2.0
    rho: tuple[float, float, float, float] = (1e6, 5e5, 5e5, 1e6)
    m: tuple[float, float] = (0.285, -0.121)
    b: tuple[float, float] = (2.00, 4.83)
    u_min: float = -5.5
    tau_a: float = 0.275
    dt_h: float = 1.0
    sigma_a: float = CALIBRATED_SIGMA_A
    alpha_lo: float = 0.5
    alpha_hi: float = 0.99999
    t_f: float = 10.0
    per_stage_slack: bool = False

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        if min(self.rho) <= 0 or self.q_a <= 0 or self.q_g <= 0:
            raise ValueError("penalties must be positive")
        if self.dt_h <= 0 or self.tau_a <= 0:
            raise ValueError("dt_h and tau_a must be positive")
        if self.u_min >= 0:
            raise ValueError("u_min must be negative")
        if not 0.5 <= self.alpha_lo <= self.alpha_hi < 1:
            raise ValueError("need 0.5 <= alpha_lo <= alpha_hi < 1")

    def accel_bound(self, v):
        """Velocity-dependent acceleration capacity min{m1 v + b1, m2 v + b2}."""
        return np.minimum(self.m[0] * np.asarray(v) + self.b[0], self.m[1] * np.asarray(v) + self.b[1])


MPC_U = MpcParams()
MPC_C = MpcParams(N=17, q_a=4000.0, T=0.0, d_r=6.0)
PROFILES = {"mpc-u": MPC_U, "mpc-c": MPC_C}


def params_from_config(profile: str, cfg: Mapping[str, str] | None = None) -> MpcParams:
    """Look up a named profile and apply ``key=value`` overrides."""
    try:
        base = PROFILES[profile.lower()]
    except KeyError:
        raise ValueError(f"unknown MPC profile {profile!r}; choose from {sorted(PROFILES)}") from None
    if not cfg:
        return base
    over = {}
    for f in fields(MpcParams):
        if f.name not in cfg:
            continue
        raw = cfg[f.name]
        if f.name in ("rho", "m", "b"):
            over[f.name] = tuple(float(t) for t in str(raw).replace(";", ",").split(","))
        elif f.name == "N":
            over[f.name] = int(raw)
        elif f.name == "per_stage_slack":
            over[f.name] = str(raw).lower() in ("1", "true", "yes")
        else:
            over[f.name] = float(raw)
    return replace(base, **over)


@dataclass(frozen=True)
class DiscreteModel:
    A_d: np.ndarray
    B_d: np.ndarray
    dt: float

    def step(self, x, u):
        return self.A_d @ np.asarray(x, dtype=float) + self.B_d * u


def continuous_model(tau_a: float) -> tuple[np.ndarray, np.ndarray]:
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0 / tau_a]])
    B = np.array([0.0, 0.0, 1.0 / tau_a])
    return A, B


def discretize(tau_a: float, dt: float) -> DiscreteModel:
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if tau_a <= 0 or dt <= 0:
        raise ValueError("tau_a and dt must be positive")
    A, B = continuous_model(tau_a)
    M = np.zeros((4, 4))
    M[:3, :3] = A
    M[:3, 3] = B
    E = expm(M * dt)
    A_d = E[:3, :3].copy()
    # integrator entries are exact; drop the expm roundoff
    A_d[0, 0] = A_d[1, 1] = 1.0
    A_d[0, 1] = dt
    A_d[1, 0] = A_d[2, 0] = A_d[2, 1] = 0.0
    return DiscreteModel(A_d=A_d, B_d=E[:3, 3].copy(), dt=dt)


def predict_pv(s_r0: float, v_r0: float, a_r0: float, v_bar: float, N: int, dt: float):
    """Constant-acceleration PV prediction with speed saturation at 0 and ``v_bar``.

    Returns arrays ``(s_r, v_r, a_r)`` of length ``N + 1``.
    """
    s = np.empty(N + 1)
    v = np.empty(N + 1)
    a = np.zeros(N + 1)
    s[0] = s_r0
    v[0] = min(max(v_r0, 0.0), v_bar)
    for i in range(N):
        saturated = (v[i] <= 0.0 and a_r0 < 0) or (v[i] >= v_bar and a_r0 > 0)
        a[i] = 0.0 if saturated else a_r0
        v[i + 1] = min(max(v[i] + dt * a[i], 0.0), v_bar)
        if a[i] == 0.0:
            s[i + 1] = s[i] + v[i] * dt
        else:
            # the saturation can be reached inside the step; integrate both pieces
            t1 = min((v[i + 1] - v[i]) / a[i], dt)
            s[i + 1] = s[i] + v[i] * t1 + 0.5 * a[i] * t1 * t1 + v[i + 1] * (dt - t1)
    a[N] = 0.0 if ((v[N] <= 0 and a_r0 < 0) or (v[N] >= v_bar and a_r0 > 0)) else a_r0
    return s, v, a


def alpha_schedule(t, params: MpcParams = MPC_U):
    """Confidence level that relaxes linearly from ``alpha_hi`` to ``alpha_lo``.

    Defined on ``[1, t_f]``; ``alpha_hi`` is used before 1 s and ``alpha_lo``
    is held after ``t_f``.
    """
    t = np.asarray(t, dtype=float)
    lin = (params.alpha_lo - params.alpha_hi) * t / params.t_f + params.alpha_hi
    out = np.where(t < 1.0, params.alpha_hi, np.where(t > params.t_f, params.alpha_lo, lin))
    return out if out.ndim else float(out)


def position_std(i: int, params: MpcParams, model: DiscreteModel) -> float:
    """Standard deviation of predicted PV position after ``i`` steps, from an
    initial acceleration uncertainty propagated through ``model``."""
    Ai = np.linalg.matrix_power(model.A_d, i)
    cov = Ai @ np.diag([0.0, 0.0, params.sigma_a ** 2]) @ Ai.T
    return math.sqrt(max(cov[0, 0], 0.0))


def position_bound(i: int, params: MpcParams, model: DiscreteModel | None = None) -> float:
    """Buffer ``s_r(i) - s_alpha(i)`` of the chance constraint at step ``i``."""
    model = model or discretize(params.tau_a, params.dt_h)
    alpha = alpha_schedule(i * params.dt_h, params)
    return float(ndtri(alpha)) * position_std(i, params, model)


def buffer_profile(params: MpcParams, model: DiscreteModel | None = None) -> np.ndarray:
    model = model or discretize(params.tau_a, params.dt_h)
    return np.array([position_bound(i, params, model) for i in range(params.N + 1)])


def calibrate_sigma(target: float = 9.5, params: MpcParams = MPC_U) -> float:
    """Acceleration standard deviation whose peak buffer equals ``target``.

    The buffer is linear in sigma, so one evaluation at unit sigma suffices.
    """
    unit = buffer_profile(replace(params, sigma_a=1.0, N=max(params.N, int(params.t_f / params.dt_h) + 1)))
    return target / float(unit.max())


def moving_speed_limit(ego: VehicleState, track: TrackMap, N: int, dt_h: float,
                       a_c: float | None = None) -> np.ndarray:
    """Per-stage speed limit from a constant-velocity position estimate and the
    constant-deceleration envelope in front of slower zones."""
    return np.array([track.envelope_limit(ego.s + ego.v * i * dt_h, a_c) for i in range(N + 1)])


@dataclass
class PvPreview:
    s_r: np.ndarray
    s_alpha: np.ndarray
    v_r: np.ndarray | None = None
    source: str = "predicted"

    def __post_init__(self):
        self.s_r = np.asarray(self.s_r, dtype=float)
        self.s_alpha = np.asarray(self.s_alpha, dtype=float)
        if self.s_r.shape != self.s_alpha.shape:
            raise ValueError("s_r and s_alpha must have equal length")


def preview_unconnected(gap: float, v_r: float, a_r: float, v_bar: float,
                        params: MpcParams, buffers: np.ndarray | None = None) -> PvPreview:
    s_r, v, _ = predict_pv(gap, v_r, a_r, v_bar, params.N, params.dt_h)
    b = buffer_profile(params) if buffers is None else buffers
    return PvPreview(s_r=s_r, s_alpha=s_r - b, v_r=v, source="predicted")


def preview_connected(plan_t: Sequence[float], plan_s: Sequence[float], v_end: float,
                      t_now: float, s_now: float, params: MpcParams) -> PvPreview:
    """Resample a communicated PV plan onto the ego's horizon.

    ``plan_t``/``plan_s`` are the plan's time stamps and positions in the ego
    frame; ``s_now`` is the PV's current position, which anchors the part of
    the horizon before the first plan point.  Beyond the plan the last point is
    extrapolated at ``v_end``.
    """
    pt = np.concatenate([[t_now], np.asarray(plan_t, dtype=float)])
    ps = np.concatenate([[s_now], np.asarray(plan_s, dtype=float)])
    keep = np.concatenate([[True], pt[1:] > t_now + 1e-9])
    pt, ps = pt[keep], ps[keep]
    tq = t_now + params.dt_h * np.arange(params.N + 1)
    s = np.interp(tq, pt, ps)
    beyond = tq > pt[-1]
    s[beyond] = ps[-1] + v_end * (tq[beyond] - pt[-1])
    s = np.maximum.accumulate(s)
    return PvPreview(s_r=s, s_alpha=s.copy(), source="connected")


@dataclass
class Prediction:
    """Condensed prediction ``X = Px x0 + Pu U`` for position, speed and acceleration."""
    Sx: np.ndarray
    Su: np.ndarray
    Vx: np.ndarray
    Vu: np.ndarray
    Ax: np.ndarray
    Au: np.ndarray


def condense(model: DiscreteModel, N: int) -> Prediction:
    nx = 3
    Phi = np.zeros((N + 1, nx, nx))
    Gam = np.zeros((N + 1, nx, N))
    Phi[0] = np.eye(nx)
    for i in range(1, N + 1):
        Phi[i] = model.A_d @ Phi[i - 1]
        Gam[i] = model.A_d @ Gam[i - 1]
        Gam[i][:, i - 1] += model.B_d
    return Prediction(Sx=Phi[:, 0, :], Su=Gam[:, 0, :], Vx=Phi[:, 1, :], Vu=Gam[:, 1, :],
                      Ax=Phi[:, 2, :], Au=Gam[:, 2, :])


class OcpBuilder:
    """Constant parts of the condensed QP for a parameter set.

    ``H`` and ``G`` do not depend on the state, only ``g`` and ``h`` change per
    step, which lets the solver reuse its scaling and factorization.
    """

    def __init__(self, params: MpcParams):
        self.params = p = params
        self.model = discretize(p.tau_a, p.dt_h)
        self.pred = pr = condense(self.model, p.N)
        N = p.N
        ns = N if p.per_stage_slack else 1
        self.ns = ns
        self.nu = N
        self.nz = N + 4 * ns
        # error e(i) = s(i) + T v(i) + d_r - s_r(i), i = 0..N
        self.Ce = pr.Su + p.T * pr.Vu
        self.ce_x = pr.Sx + p.T * pr.Vx
        H = np.zeros((self.nz, self.nz))
        H[:N, :N] = 2.0 * (p.q_g * self.Ce.T @ self.Ce + p.q_a * pr.Au.T @ pr.Au + p.q_a * np.eye(N))
        self.H = 0.5 * (H + H.T)

        rows = []
        st = slice(1, N + 1)

        def slack_cols(j):
            cols = np.zeros((N, self.nz))
            if p.per_stage_slack:
                cols[np.arange(N), N + j * N + np.arange(N)] = -1.0
            else:
                cols[:, N + j] = -1.0
            return cols

        def block(Mu, j=None):
            out = np.zeros((Mu.shape[0], self.nz))
            out[:, :N] = Mu
            if j is not None:
                out += slack_cols(j)
            return out

        m1, m2 = p.m
        Iu = np.eye(N)
        # ordering of constraint groups is relied on in rhs()
        rows.append(block(pr.Vu[st], 1))                 # v <= vbar + e2
        rows.append(block(-pr.Vu[st], 2))                # -v <= e3
        rows.append(block(Iu - m1 * pr.Vu[:N]))          # u <= m1 v + b1   (hard)
        rows.append(block(Iu - m2 * pr.Vu[:N]))          # u <= m2 v + b2   (hard)
        rows.append(block(pr.Au[st] - m1 * pr.Vu[st], 3))  # a <= m1 v + b1 + e4
        rows.append(block(pr.Au[st] - m2 * pr.Vu[st], 3))  # a <= m2 v + b2 + e4
        rows.append(block(pr.Su[st], 0))                 # s <= s_alpha - d_min + e1
        self.G = np.vstack(rows)
        self.lb = np.concatenate([np.full(N, p.u_min), np.zeros(4 * ns)])
        self.ub = np.full(self.nz, np.inf)
        rho = np.repeat(np.asarray(p.rho, dtype=float), ns)
        self.g_slack = rho

    def build(self, x0: np.ndarray, preview: PvPreview, v_bar: np.ndarray) -> OcpProblem:
        p, pr = self.params, self.pred
        N = p.N
        if preview.s_r.size != N + 1 or np.size(v_bar) != N + 1:
            raise ValueError(f"preview and speed limit need {N + 1} stages")
        ce = self.ce_x @ x0 + p.d_r - preview.s_r
        ax = pr.Ax @ x0
        g = np.empty(self.nz)
        g[:N] = 2.0 * (p.q_g * self.Ce.T @ ce + p.q_a * pr.Au.T @ ax)
        g[N:] = self.g_slack
        st = slice(1, N + 1)
        vx = pr.Vx @ x0
        m1, m2 = p.m
        b1, b2 = p.b
        h = np.concatenate([
            np.asarray(v_bar, dtype=float)[st] - vx[st],
            vx[st],
            m1 * vx[:N] + b1,
            m2 * vx[:N] + b2,
            m1 * vx[st] + b1 - ax[st],
            m2 * vx[st] + b2 - ax[st],
            preview.s_alpha[st] - p.d_min - pr.Sx[st] @ x0,
        ])
        return OcpProblem(H=self.H, g=g, G=self.G, h=h, lb=self.lb, ub=self.ub)

    def constant_offset(self, x0: np.ndarray, preview: PvPreview) -> float:
        """Objective terms independent of the decision variables."""
        p, pr = self.params, self.pred
        ce = self.ce_x @ x0 + p.d_r - preview.s_r
        ax = pr.Ax @ x0
        return float(p.q_g * ce @ ce + p.q_a * ax @ ax)

    def trajectory(self, x0: np.ndarray, U: np.ndarray):
        pr = self.pred
        return pr.Sx @ x0 + pr.Su @ U, pr.Vx @ x0 + pr.Vu @ U, pr.Ax @ x0 + pr.Au @ U


def assemble_ocp(ego: VehicleState, preview: PvPreview, v_bar, params: MpcParams) -> OcpProblem:
    """Condensed QP for one step with the ego at the origin of its frame."""
    builder = OcpBuilder(params)
    return builder.build(np.array([0.0, ego.v, ego.a]), preview, np.asarray(v_bar))


@dataclass
class MpcResult:
    u0: float
    s_plan: np.ndarray       # ego-frame positions s(1..N)
    v_plan: np.ndarray       # v(0..N)
    a_plan: np.ndarray
    U: np.ndarray
    slack: np.ndarray
    status: str
    solve_time: float
    fallback: bool = False

    @property
    def v_terminal(self) -> float:
        return float(self.v_plan[-1])


@dataclass
class MpcController:
    """Receding-horizon controller; owns its solver and warm-start state."""

    params: MpcParams = MPC_U
    fallback_accel: float = -2.0
    solver: QPSolver = field(default_factory=lambda: QPSolver(max_iter=4000))

    def __post_init__(self):
        self.builder = OcpBuilder(self.params)
        self.buffers = buffer_profile(self.params, self.builder.model)
        self.last: MpcResult | None = None
        self.solve_times: list[float] = []

    def preview_from_state(self, gap: float, v_r: float, a_r: float, v_bar_pv: float) -> PvPreview:
        return preview_unconnected(gap, v_r, a_r, v_bar_pv, self.params, self.buffers)

    def step(self, ego: VehicleState, preview: PvPreview, v_bar: np.ndarray) -> MpcResult:
        p = self.params
        x0 = np.array([0.0, ego.v, ego.a])
        t0 = time.perf_counter()
        prob = self.builder.build(x0, preview, v_bar)
        sol: QpSolution = self.solver.solve(prob)
        elapsed = time.perf_counter() - t0
        self.solve_times.append(elapsed)
        N = p.N
        if not sol.optimal:
            logger.warning("MPC solve failed (%s); applying fallback deceleration", sol.status)
            U = np.full(N, self.fallback_accel)
            s, v, a = self.builder.trajectory(x0, U)
            res = MpcResult(self.fallback_accel, s[1:], v, a, U, np.zeros(4), sol.status, elapsed, True)
        else:
            U = sol.x[:N]
            s, v, a = self.builder.trajectory(x0, U)
            res = MpcResult(float(U[0]), s[1:], v, a, U, sol.x[N:], sol.status, elapsed)
        self.last = res
        return res


def mpc_step(ego: VehicleState, track: TrackMap, params: MpcParams,
             pv_state: tuple[float, float, float] | None = None,
             pv_plan: tuple[Sequence[float], Sequence[float], float, float, float] | None = None,
             controller: MpcController | None = None) -> MpcResult:
    """Single MPC step.

    ``pv_state`` is ``(bumper_gap, v_r, a_r)`` for the unconnected variant.
    ``pv_plan`` is ``(plan_t, plan_s, v_end, t_now, s_now)`` in the ego frame
    for the connected variant; the plan is used directly as both nominal and
    bounding PV position.
    """
    ctl = controller or MpcController(params, fallback_accel=track.comfortable_decel)
    v_bar = moving_speed_limit(ego, track, params.N, params.dt_h)
    if pv_plan is not None:
        preview = preview_connected(*pv_plan, params)
    elif pv_state is not None:
        gap, v_r, a_r = pv_state
        v_bar_pv = track.limit_at(ego.s + gap + track.vehicle_length)
        preview = ctl.preview_from_state(gap, v_r, a_r, v_bar_pv)
    else:
        raise ValueError("need either pv_state or pv_plan")
    return ctl.step(ego, preview, v_bar)
