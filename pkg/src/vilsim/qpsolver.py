"""Dense convex QP solver based on operator splitting.

Solves::

    minimize    0.5 x'Hx + g'x
    subject to  Gx <= h,  lb <= x <= ub

with an ADMM iteration on the equivalent form ``l <= Ax <= u`` (Ruiz
equilibration, over-relaxation, adaptive step size) followed by an
active-set polishing step that recovers an accurate KKT point.  Scaling and
factorizations are cached by problem structure so that repeated solves with
the same ``H``/``G`` (the MPC case) only pay for the iteration itself.
"""
from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


class QPDimensionError(ValueError):
    pass


@dataclass
class OcpProblem:
    H: np.ndarray
    g: np.ndarray
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.size
        if self.H.shape != (n, n):
            raise QPDimensionError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if self.G is None:
            self.G = np.zeros((0, n))
            self.h = np.zeros(0)
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if self.G.size == 0:
            self.G = self.G.reshape(0, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.G.shape[1] != n:
            raise QPDimensionError(f"G has {self.G.shape[1]} columns, expected {n}")
        if self.h.size != self.G.shape[0]:
            raise QPDimensionError("h length does not match rows of G")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.lb.size != n or self.ub.size != n:
            raise QPDimensionError("bound vectors must have length n")

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m(self) -> int:
        return self.G.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)

    def dump(self, path: str | Path) -> Path:
        """Write the problem as a plain-text matrix file for offline replay."""
        path = Path(path)
        with path.open("w") as fh:
            for name in ("H", "g", "G", "h", "lb", "ub"):
                arr = np.atleast_2d(getattr(self, name))
                fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
                np.savetxt(fh, arr, fmt="%.17g")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "OcpProblem":
        parts: dict[str, np.ndarray] = {}
        lines = Path(path).read_text().splitlines()
        i = 0
        while i < len(lines):
            _, name, r, c = lines[i].split()
            r, c = int(r), int(c)
            rows = [np.array(lines[i + 1 + k].split(), dtype=float) for k in range(r)]
            parts[name] = np.array(rows).reshape(r, c) if r else np.zeros((0, c))
            i += 1 + r
        return cls(H=parts["H"], g=parts["g"].ravel(), G=parts["G"], h=parts["h"].ravel(),
                   lb=parts["lb"].ravel(), ub=parts["ub"].ravel())


@dataclass
class QpSolution:
    x: np.ndarray
    lam: np.ndarray           # multipliers for Gx <= h
    mu_lb: np.ndarray         # multipliers for x >= lb
    mu_ub: np.ndarray         # multipliers for x <= ub
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    complementarity: float
    objective: float = float("nan")
    polished: bool = False

    @property
    def kkt_residual(self) -> float:
        return max(self.primal_residual, self.dual_residual, self.complementarity)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def kkt_residuals(p: OcpProblem, x, lam, mu_lb, mu_ub) -> tuple[float, float, float]:
    """Primal infeasibility, dual residual (stationarity and sign) and
    complementarity, all as infinity norms on the unscaled problem."""
    slack = p.h - p.G @ x
    prim = 0.0
    if p.m:
        prim = max(prim, float(np.max(-slack, initial=0.0)))
    prim = max(prim, float(np.max(p.lb - x, initial=0.0)), float(np.max(x - p.ub, initial=0.0)))
    stat = p.H @ x + p.g + p.G.T @ lam + mu_ub - mu_lb
    dual = float(np.max(np.abs(stat), initial=0.0))
    dual = max(dual, float(np.max(-lam, initial=0.0)), float(np.max(-mu_lb, initial=0.0)),
               float(np.max(-mu_ub, initial=0.0)))
    comp = 0.0
    if p.m:
        comp = float(np.max(np.abs(lam * slack), initial=0.0))
    with np.errstate(invalid="ignore"):
        lo = np.where(mu_lb != 0, mu_lb * (x - p.lb), 0.0)
        hi = np.where(mu_ub != 0, mu_ub * (p.ub - x), 0.0)
    comp = max(comp, float(np.max(np.abs(lo), initial=0.0)), float(np.max(np.abs(hi), initial=0.0)))
    return prim, dual, comp


class _Workspace:
    """Scaled problem data and factorization cache for one structure."""

    def __init__(self, p: OcpProblem, box_rows: np.ndarray, reg: float, scaling_iter: int):
        n = p.n
        self.box_rows = box_rows
        A = np.vstack([p.G, np.eye(n)[box_rows]]) if box_rows.size else p.G.copy()
        P = p.H + reg * np.eye(n)
        self.n, self.m = n, A.shape[0]
        D = np.ones(n)
        E = np.ones(self.m)
        Ps, As = P.copy(), A.copy()
        for _ in range(scaling_iter):
            col = np.maximum(np.abs(Ps).max(axis=0), np.abs(As).max(axis=0, initial=0.0))
            dD = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            dE = 1.0 / np.sqrt(np.clip(np.abs(As).max(axis=1, initial=0.0), 1e-4, 1e4)) if self.m else np.ones(0)
            Ps = dD[:, None] * Ps * dD[None, :]
            As = dE[:, None] * As * dD[None, :]
            D *= dD
            E *= dE
        c = 1.0 / max(float(np.mean(np.abs(Ps).max(axis=0))), 1e-4)
        c = min(c, 1e4)
        self.D, self.E, self.c = D, E, c
        self.P = c * Ps
        self.A = As
        self.AT = As.T.copy()
        self._inv: dict[float, np.ndarray] = {}
        self.warm_x: np.ndarray | None = None
        self.warm_y: np.ndarray | None = None
        self.rho = 0.1
        self._rows: np.ndarray | None = None

    def full_rows(self, p: OcpProblem):
        if self._rows is None:
            A = np.vstack([p.G, np.eye(p.n)[self.box_rows]]) if self.box_rows.size else p.G
            self._rows = A
        l = np.concatenate([np.full(p.m, -np.inf), p.lb[self.box_rows]])
        u = np.concatenate([p.h, p.ub[self.box_rows]])
        return self._rows, l, u

    def kinv(self, rho_vec: np.ndarray, sigma: float) -> np.ndarray:
        key = float(rho_vec.max()), float(rho_vec.min())
        K = self._inv.get(key)
        if K is None:
            M = self.P + sigma * np.eye(self.n) + (self.AT * rho_vec) @ self.A
            K = np.linalg.inv(M)
            if len(self._inv) > 32:
                self._inv.clear()
            self._inv[key] = K
        return K


@dataclass
class QPSolver:
    """Operator-splitting QP solver with per-structure warm starts.

    One instance per controller; instances are not thread-safe.  ``H`` and
    ``G`` are recognised by identity between consecutive solves, so they must
    not be modified in place once handed to the solver.
    """

    tol: float = 1e-6
    max_iter: int = 4000
    eps_admm: float = 1e-5
    sigma: float = 1e-6
    alpha: float = 1.6
    rho0: float = 0.1
    reg: float = 1e-9
    scaling_iter: int = 10
    polish_every: int = 25
    polish_passes: int = 60
    adaptive_every: int = 25
    dump_dir: str | None = None
    _cache: dict = field(default_factory=dict, repr=False)
    _last: tuple | None = field(default=None, repr=False)

    def _workspace(self, p: OcpProblem) -> tuple[_Workspace, np.ndarray, np.ndarray]:
        box_rows = np.flatnonzero(np.isfinite(p.lb) | np.isfinite(p.ub))
        last = self._last
        if last is not None and last[0] is p.H and last[1] is p.G and np.array_equal(last[2], box_rows):
            # same matrix objects as the previous solve (the MPC case): skip hashing
            key = last[3]
        else:
            hsh = hashlib.blake2b(digest_size=16)
            hsh.update(p.H.tobytes())
            hsh.update(p.G.tobytes())
            hsh.update(box_rows.tobytes())
            key = (p.n, p.m, hsh.digest())
            self._last = (p.H, p.G, box_rows, key)
        ws = self._cache.get(key)
        if ws is None:
            ws = _Workspace(p, box_rows, self.reg, self.scaling_iter)
            if len(self._cache) > 16:
                self._cache.clear()
            self._cache[key] = ws
        l = np.concatenate([np.full(p.m, -np.inf), p.lb[box_rows]])
        u = np.concatenate([p.h, p.ub[box_rows]])
        return ws, l, u

    def solve(self, p: OcpProblem, tol: float | None = None, max_iter: int | None = None,
              warm_start: bool = True) -> QpSolution:
        tol = self.tol if tol is None else tol
        max_iter = self.max_iter if max_iter is None else max_iter
        if np.any(p.lb > p.ub):
            return self._finish(p, np.clip(np.zeros(p.n), p.lb, p.ub), None, None, INFEASIBLE, 0)
        ws, l, u = self._workspace(p)
        n, m = ws.n, ws.m
        D, E, c = ws.D, ws.E, ws.c
        q = c * D * p.g
        with np.errstate(invalid="ignore"):
            ls = E * l
            us = E * u

        if warm_start and ws.warm_x is not None:
            x, y = ws.warm_x.copy(), ws.warm_y.copy()
        else:
            x, y = np.zeros(n), np.zeros(m)
        z = np.clip(ws.A @ x, ls, us) if m else np.zeros(0)

        # try polishing straight from the warm start's active set
        sol = self._polish(p, ws, x, z, y, ls, us, tol, 0)
        if sol is not None:
            ws.warm_x, ws.warm_y = self._scaled_from(ws, sol)
            return sol

        eq = np.isclose(ls, us) if m else np.zeros(0, bool)
        free = ~np.isfinite(ls) & ~np.isfinite(us) if m else np.zeros(0, bool)
        rho = ws.rho
        rho_vec = self._rho_vec(rho, eq, free)
        K = ws.kinv(rho_vec, self.sigma)
        sigma, alpha = self.sigma, self.alpha
        y_prev = y.copy()
        for it in range(1, max_iter + 1):
            rhs = sigma * x - q + (ws.AT @ (rho_vec * z - y) if m else 0.0)
            xt = K @ rhs
            x_new = alpha * xt + (1 - alpha) * x
            if m:
                zt = ws.A @ xt
                zr = alpha * zt + (1 - alpha) * z
                z_new = np.clip(zr + y / rho_vec, ls, us)
                y_prev = y
                y = y + rho_vec * (zr - z_new)
                z = z_new
            x = x_new

            if it % self.polish_every and it % self.adaptive_every and it != max_iter:
                continue
            rp, rd, ep, ed, Ax, ATy, Px = self._residuals(ws, x, z, y, q)
            converged = rp <= ep and rd <= ed
            if it % self.polish_every == 0 or converged or it == max_iter:
                sol = self._polish(p, ws, x, z, y, ls, us, tol, it)
                if sol is not None:
                    ws.warm_x, ws.warm_y = self._scaled_from(ws, sol)
                    ws.rho = rho
                    return sol
            if m and self._primal_infeasible(ws, y - y_prev, ls, us):
                ws.warm_x = ws.warm_y = None
                return self._finish(p, D * x, None, None, INFEASIBLE, it, ws=ws, y_scaled=y)
            if m and it % self.adaptive_every == 0:
                num = rp / max(float(np.max(np.abs(Ax))), float(np.max(np.abs(z))), 1e-10)
                den = rd / max(float(np.max(np.abs(Px))), float(np.max(np.abs(ATy))),
                               float(np.max(np.abs(q))), 1e-10)
                new_rho = float(np.clip(rho * np.sqrt(num / max(den, 1e-12)), 1e-6, 1e6))
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    rho_vec = self._rho_vec(rho, eq, free)
                    K = ws.kinv(rho_vec, sigma)
        ws.warm_x, ws.warm_y = x, y
        logger.debug("QP hit max_iter=%d", max_iter)
        if self.dump_dir:
            p.dump(Path(self.dump_dir) / f"qp_fail_{id(p):x}.txt")
        return self._finish(p, D * x, None, None, MAX_ITER, max_iter, ws=ws, y_scaled=y)

    @staticmethod
    def _rho_vec(rho, eq, free):
        v = np.full(eq.size, rho)
        v[eq] = 1e3 * rho
        v[free] = 1e-6
        return v

    @staticmethod
    def _residuals(ws: _Workspace, x, z, y, q):
        Px = ws.P @ x
        Ax = ws.A @ x if ws.m else np.zeros(0)
        ATy = ws.AT @ y if ws.m else np.zeros(ws.n)
        Einv = 1.0 / ws.E
        Dinv = 1.0 / ws.D
        rp = float(np.max(np.abs(Einv * (Ax - z)), initial=0.0))
        rd = float(np.max(np.abs(Dinv * (Px + q + ATy)), initial=0.0)) / ws.c
        eps = 1e-5
        ep = eps + eps * max(float(np.max(np.abs(Einv * Ax), initial=0.0)),
                             float(np.max(np.abs(Einv * z), initial=0.0)))
        ed = eps + eps * max(float(np.max(np.abs(Dinv * Px), initial=0.0)),
                             float(np.max(np.abs(Dinv * ATy), initial=0.0)),
                             float(np.max(np.abs(Dinv * q), initial=0.0))) / ws.c
        return rp, rd, ep, ed, Ax, ATy, Px

    @staticmethod
    def _primal_infeasible(ws: _Workspace, dy, ls, us) -> bool:
        norm_dy = float(np.max(np.abs(ws.E * dy), initial=0.0))
        if norm_dy < 1e-8:
            return False
        dy_n = dy / norm_dy
        if float(np.max(np.abs(ws.D * (ws.AT @ dy_n)), initial=0.0)) > 1e-6:
            return False
        pos, neg = np.maximum(dy_n, 0), np.minimum(dy_n, 0)
        with np.errstate(invalid="ignore"):
            val = np.where(pos > 0, us * pos, 0.0).sum() + np.where(neg < 0, ls * neg, 0.0).sum()
        return bool(np.isfinite(val) and val < -1e-6)

    def _split_duals(self, p: OcpProblem, ws: _Workspace, y_unscaled: np.ndarray):
        lam = np.maximum(y_unscaled[:p.m], 0.0)
        yb = y_unscaled[p.m:]
        mu_lb = np.zeros(p.n)
        mu_ub = np.zeros(p.n)
        mu_ub[ws.box_rows] = np.maximum(yb, 0.0)
        mu_lb[ws.box_rows] = np.maximum(-yb, 0.0)
        return lam, mu_lb, mu_ub

    def _polish(self, p, ws, x, z, y, ls, us, tol, it) -> QpSolution | None:
        """Recover an exact KKT point from the ADMM iterate.

        The active set guessed from ``(z, y)`` is refined by a few primal-dual
        active-set passes: violated rows are added and rows whose multiplier
        has the wrong sign are released, until the equality-constrained
        solution satisfies every KKT condition.
        """
        if ws.m:
            lower = ((z - ls) < -y) & np.isfinite(ls)
            upper = ((us - z) < y) & np.isfinite(us)
            lower &= ~upper
        else:
            lower = upper = np.zeros(0, bool)
        A_full, l_full, u_full = ws.full_rows(p)
        gscale = 1.0 + float(np.max(np.abs(p.g), initial=0.0))
        rnorm = 1.0 / np.maximum(np.abs(A_full).max(axis=1, initial=0.0), 1e-12)
        seen = set()
        for _ in range(self.polish_passes):
            key = (lower.tobytes(), upper.tobytes())
            if key in seen:
                return None
            seen.add(key)
            res = self._solve_active(p, A_full, l_full, u_full, lower, upper)
            if res is None:
                return None
            xp, y_full = res
            yscale = 1.0 + float(np.max(np.abs(y_full), initial=0.0))
            wrong = np.where(lower, np.maximum(y_full, 0.0), 0.0) + np.where(upper, np.maximum(-y_full, 0.0), 0.0)
            with np.errstate(invalid="ignore"):
                r = A_full @ xp
                viol_hi = np.where(~upper & np.isfinite(u_full), r - u_full, 0.0)
                viol_lo = np.where(~lower & np.isfinite(l_full), l_full - r, 0.0)
            if wrong.max(initial=0.0) > 0.0:
                # release one row at a time; bulk swaps oscillate on slack-heavy problems
                k = int(np.argmax(wrong))
                lower[k] = upper[k] = False
                continue
            if max(viol_hi.max(initial=0.0), viol_lo.max(initial=0.0)) > tol:
                # pick by row-normalized violation
                vh, vl = viol_hi * rnorm, viol_lo * rnorm
                if vh.max(initial=0.0) >= vl.max(initial=0.0):
                    upper[int(np.argmax(vh))] = True
                else:
                    lower[int(np.argmax(vl))] = True
                continue
            lam, mu_lb, mu_ub = self._split_duals(p, ws, y_full)
            prim, dual, comp = kkt_residuals(p, xp, lam, mu_lb, mu_ub)
            if prim <= tol and dual <= tol * max(gscale, yscale) and comp <= tol * max(gscale, yscale):
                return QpSolution(xp, lam, mu_lb, mu_ub, OPTIMAL, it, prim, dual, comp,
                                  p.objective(xp), polished=True)
            return None
        return None

    def _solve_active(self, p, A_full, l_full, u_full, lower, upper):
        act = np.flatnonzero(lower | upper)
        n, k = p.n, act.size
        Aa = A_full[act]
        ba = np.where(lower[act], l_full[act], u_full[act]) if k else np.zeros(0)
        K0 = np.zeros((n + k, n + k))
        K0[:n, :n] = p.H
        K0[:n, n:] = Aa.T
        K0[n:, :n] = Aa
        rhs = np.concatenate([-p.g, ba])
        sol = self._kkt_solve(K0, rhs, n, k)
        if sol is None:
            return None
        if not np.all(np.isfinite(sol)):
            return None
        xp = sol[:n].copy()
        # box rows held at their bound are exact by construction
        nb = p.m
        box_act = act[act >= nb]
        if box_act.size:
            cols = A_full[box_act].argmax(axis=1)
            xp[cols] = ba[act >= nb]
        y_full = np.zeros(A_full.shape[0])
        y_full[act] = sol[n:]
        return xp, y_full

    @staticmethod
    def _kkt_solve(K0, rhs, n, k):
        """Solve the active-set KKT system, exact first, then with a small
        quasi-definite regularization plus iterative refinement."""
        tol = 1e-10 * (1.0 + float(np.max(np.abs(rhs), initial=0.0)))
        delta0 = 1e-9 * max(1.0, float(np.max(np.abs(K0), initial=1.0)))
        best_sol, best_res = None, np.inf
        for delta in (0.0, delta0 * 1e-3, delta0):
            Kd = K0.copy()
            if delta:
                Kd[:n, :n] += delta * np.eye(n)
                Kd[n:, n:] -= delta * np.eye(k)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    lu = scipy.linalg.lu_factor(Kd, check_finite=False)
                    sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
                    for _ in range(20):
                        r = rhs - K0 @ sol
                        if not np.all(np.isfinite(r)) or float(np.max(np.abs(r), initial=0.0)) <= tol:
                            break
                        sol = sol + scipy.linalg.lu_solve(lu, r, check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                continue
            if not np.all(np.isfinite(sol)):
                continue
            res = float(np.max(np.abs(rhs - K0 @ sol), initial=0.0))
            if res < best_res:
                best_sol, best_res = sol, res
            if res <= tol:
                break
        return best_sol

    def _scaled_from(self, ws: _Workspace, sol: QpSolution):
        x = sol.x / ws.D
        yb = sol.mu_ub[ws.box_rows] - sol.mu_lb[ws.box_rows]
        y = np.concatenate([sol.lam, yb]) * ws.c / ws.E if ws.m else np.zeros(0)
        return x, y

    def _finish(self, p, x, lam, mu, status, it, ws=None, y_scaled=None) -> QpSolution:
        if ws is not None and y_scaled is not None and ws.m:
            y = y_scaled * ws.E / ws.c
            lam, mu_lb, mu_ub = self._split_duals(p, ws, y)
        else:
            lam, mu_lb, mu_ub = np.zeros(p.m), np.zeros(p.n), np.zeros(p.n)
        prim, dual, comp = kkt_residuals(p, x, lam, mu_lb, mu_ub)
        return QpSolution(x, lam, mu_lb, mu_ub, status, it, prim, dual, comp, p.objective(x))


def solve(p: OcpProblem, tol: float = 1e-6, max_iter: int = 4000) -> QpSolution:
    """One-shot solve without warm start."""
    return QPSolver(tol=tol, max_iter=max_iter).solve(p, warm_start=False)
