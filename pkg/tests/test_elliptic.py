import numpy as np
import pytest

from nlch import ConvergenceError, Grid, Kernel, ValidationError, assemble_coupling, project_mean_zero
from nlch.elliptic import (
    EllipticProblem,
    EllipticSolver,
    estimate_ratio,
    objective,
    solve_nonlocal,
    solve_regularized,
)
from nlch.operators import apply_nonlocal, l2_norm, neumann_laplacian, seminorm_matrix


@pytest.fixture(scope="module")
def setup():
    g = Grid((1.0,), (64,))
    return g, assemble_coupling(g, Kernel(1.5, 1))


def test_zero_rhs(setup):
    g, C = setup
    assert np.all(solve_nonlocal(EllipticProblem(C, np.zeros(g.N))).u == 0.0)
    assert np.all(solve_regularized(EllipticProblem(C, np.zeros(g.N), theta_reg=0.5)).u == 0.0)


def test_manufactured_solution(setup):
    g, C = setup
    u = project_mean_zero(np.cos(2 * np.pi * g.centers[:, 0]) + g.centers[:, 0] ** 3)
    res = solve_nonlocal(EllipticProblem(C, apply_nonlocal(C, u)))
    assert res.residual <= 1e-10
    assert np.allclose(res.u, u, atol=1e-8 * np.abs(u).max())
    theta = 0.3
    rhs = apply_nonlocal(C, u) + theta * (neumann_laplacian(g) @ u)
    reg = solve_regularized(EllipticProblem(C, rhs, theta_reg=theta))
    assert np.allclose(reg.u, u, atol=1e-8 * np.abs(u).max())
    assert abs(reg.u.mean()) < 1e-14


def test_2d_manufactured():
    g = Grid((1.0, 2.0), (8, 12))
    C = assemble_coupling(g, Kernel(1.3, 2))
    u = project_mean_zero(np.random.default_rng(0).standard_normal(g.N))
    res = EllipticSolver(C).solve(apply_nonlocal(C, u))
    assert np.allclose(res.u, u, atol=1e-8)


def test_solution_minimizes_objective(setup):
    g, C = setup
    rhs = project_mean_zero(np.sin(3 * g.centers[:, 0]))
    prob = EllipticProblem(C, rhs, theta_reg=0.1)
    u = solve_regularized(prob).u
    best = objective(prob, u)
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = u + 1e-3 * project_mean_zero(rng.standard_normal(g.N))
        assert objective(prob, v) > best


def test_validation(setup):
    g, C = setup
    with pytest.raises(ValidationError):
        EllipticProblem(C, np.ones(g.N))
    with pytest.raises(ValidationError):
        EllipticProblem(C, np.zeros(3))
    with pytest.raises(ValidationError):
        EllipticProblem(C, np.zeros(g.N), theta_reg=-1.0)
    with pytest.raises(ValidationError):
        solve_regularized(EllipticProblem(C, np.zeros(g.N)))


def test_unreachable_tolerance_reports_residual(setup):
    g, C = setup
    rhs = project_mean_zero(np.random.default_rng(2).standard_normal(g.N))
    with pytest.raises(ConvergenceError) as err:
        EllipticSolver(C).solve(rhs, tol=1e-300)
    assert err.value.residual is not None and err.value.residual > 0


def test_theta_sweep_bounded(setup):
    g, C = setup
    W = seminorm_matrix(g, 1.5)
    rhs = project_mean_zero(np.random.default_rng(3).standard_normal(g.N))
    thetas = (1.0, 0.1, 0.01, 1e-3, 1e-4)
    ratios = [estimate_ratio(W, EllipticSolver(C, t).solve(rhs).u, rhs, t) for t in thetas]
    limit = estimate_ratio(W, EllipticSolver(C, 0.0).solve(rhs).u, rhs, 0.0)
    # one constant bounds the whole sweep: the ratios stay below the theta = 0 value
    assert all(0 < r <= limit * (1 + 1e-9) for r in ratios)
    assert ratios[-1] == pytest.approx(limit, rel=1e-2)


def test_theta_continuation(setup):
    g, C = setup
    rhs = project_mean_zero(np.exp(g.centers[:, 0]))
    u0 = solve_nonlocal(EllipticProblem(C, rhs)).u
    dist = [l2_norm(g, EllipticSolver(C, 2.0**-k).solve(rhs).u - u0) for k in range(7)]
    assert all(a > b for a, b in zip(dist, dist[1:]))
