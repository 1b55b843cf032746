import numpy as np
import pytest
from hypothesis import given, strategies as st

from vilsim.qpsolver import OcpProblem, QPDimensionError, QPSolver, kkt_residuals, solve


def test_two_variable_oracle():
    p = OcpProblem(np.eye(2) * 2, np.zeros(2), G=[[-1.0, -1.0]], h=[-2.0])
    sol = solve(p)
    assert sol.optimal
    assert np.allclose(sol.x, [1.0, 1.0], atol=1e-9)
    assert p.objective(sol.x) == pytest.approx(2.0, abs=1e-9)
    assert sol.lam[0] == pytest.approx(2.0, abs=1e-8)


def test_unconstrained():
    sol = solve(OcpProblem([[2.0]], [-6.0]))
    assert sol.x[0] == pytest.approx(3.0, abs=1e-10)


def test_bounds_active():
    sol = solve(OcpProblem([[2.0]], [-6.0], lb=[0.0], ub=[1.0]))
    assert sol.x[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.mu_ub[0] == pytest.approx(4.0, abs=1e-7)


def test_dimension_errors():
    with pytest.raises(QPDimensionError):
        OcpProblem(np.eye(2), np.zeros(3))
    with pytest.raises(QPDimensionError):
        OcpProblem(np.eye(2), np.zeros(2), G=np.ones((1, 3)), h=[0.0])
    with pytest.raises(QPDimensionError):
        OcpProblem(np.eye(2), np.zeros(2), G=np.ones((2, 2)), h=[0.0])


def test_infeasible_reported():
    p = OcpProblem(np.eye(1), [0.0], G=[[1.0], [-1.0]], h=[-1.0, -1.0])
    sol = QPSolver(max_iter=2000).solve(p)
    assert not sol.optimal


def test_dump_load_round_trip(tmp_path, rng):
    M = rng.normal(size=(4, 4))
    p = OcpProblem(M @ M.T + np.eye(4), rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3),
                   lb=-np.ones(4))
    q = OcpProblem.load(p.dump(tmp_path / "qp.txt"))
    for name in ("H", "g", "G", "h", "lb", "ub"):
        assert np.array_equal(getattr(p, name), getattr(q, name))


def test_warm_start_reuses_structure(rng):
    M = rng.normal(size=(6, 6))
    H = M @ M.T + np.eye(6)
    G = rng.normal(size=(10, 6))
    s = QPSolver()
    first = s.solve(OcpProblem(H, rng.normal(size=6), G, np.ones(10)))
    second = s.solve(OcpProblem(H, rng.normal(size=6), G, np.ones(10)))
    assert first.optimal and second.optimal


@st.composite
def feasible_qp(draw):
    n = draw(st.integers(1, 8))
    m = draw(st.integers(0, 12))
    seed = draw(st.integers(0, 2**31))
    r = np.random.default_rng(seed)
    M = r.normal(size=(n, n))
    G = r.normal(size=(m, n))
    x0 = r.normal(size=n)
    return OcpProblem(M @ M.T + 0.1 * np.eye(n), r.normal(size=n), G, G @ x0 + r.uniform(0, 1, m))


@given(feasible_qp())
def test_kkt_conditions_hold(p):
    sol = solve(p)
    assert sol.optimal
    prim, dual, comp = kkt_residuals(p, sol.x, sol.lam, sol.mu_lb, sol.mu_ub)
    assert max(prim, dual, comp) <= 1e-6


@given(feasible_qp())
def test_no_feasible_point_does_better(p):
    sol = solve(p)
    # any feasible perturbation along the constraint set cannot lower the objective
    r = np.random.default_rng(0)
    for _ in range(20):
        y = sol.x + 1e-3 * r.normal(size=p.n)
        if p.m == 0 or np.all(p.G @ y <= p.h):
            assert p.objective(y) >= p.objective(sol.x) - 1e-9


def test_matches_cvxopt_small_batch(rng):
    cvxopt = pytest.importorskip("cvxopt")
    cvxopt.solvers.options.update(show_progress=False, abstol=1e-12, reltol=1e-12, feastol=1e-12)
    for _ in range(25):
        n, m = int(rng.integers(1, 15)), int(rng.integers(1, 30))
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.1 * np.eye(n)
        g = rng.normal(size=n)
        G = rng.normal(size=(m, n))
        h = G @ rng.normal(size=n) + rng.uniform(0, 1, m)
        ref = np.array(cvxopt.solvers.qp(*(cvxopt.matrix(a) for a in (H, g, G, h)))["x"]).ravel()
        assert np.max(np.abs(solve(OcpProblem(H, g, G, h)).x - ref)) < 1e-5
