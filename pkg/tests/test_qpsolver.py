import numpy as np
import pytest
from scipy.optimize import minimize

from qpsolver import QpProblem, QpStatus, SolverOptions, phase_one, primal_residual, solve


def random_problem(rng, n):
    """Strictly convex QP built around a known feasible point."""
    m = rng.normal(size=(n, n))
    H = m.T @ m + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 5
    x_feas = rng.normal(size=n)
    m_eq = int(rng.integers(0, max(1, n // 3) + 1))
    m_in = int(rng.integers(0, n + 1))
    A_eq = rng.normal(size=(m_eq, n))
    A_in = rng.normal(size=(m_in, n))
    return QpProblem(
        H=H,
        f=f,
        A_eq=A_eq,
        b_eq=A_eq @ x_feas,
        A_in=A_in,
        b_in=A_in @ x_feas - rng.uniform(0.0, 1.0, m_in),
        lb=x_feas - rng.uniform(0.05, 2.0, n),
        ub=x_feas + rng.uniform(0.05, 2.0, n),
    )


def assert_kkt(problem, solution, tol=1e-6):
    x = solution.x
    scale = max(1.0, float(np.max(np.abs(problem.f))))
    assert solution.status is QpStatus.OPTIMAL
    assert solution.primal_residual <= tol
    assert solution.dual_residual <= tol * scale
    assert np.all(solution.dual_in >= -tol * scale)
    if problem.A_in.shape[0]:
        slack = problem.A_in @ x - problem.b_in
        assert np.max(np.abs(solution.dual_in * slack)) <= tol * scale
    at_lower = solution.dual_bounds > tol * scale
    at_upper = solution.dual_bounds < -tol * scale
    np.testing.assert_allclose(x[at_lower], problem.lb[at_lower], atol=tol)
    np.testing.assert_allclose(x[at_upper], problem.ub[at_upper], atol=tol)


def test_unconstrained_minimum():
    problem = QpProblem(H=np.eye(2), f=[-1.0, -1.0])
    solution = solve(problem)
    assert solution.optimal
    np.testing.assert_allclose(solution.x, [1.0, 1.0], atol=1e-10)
    assert solution.objective == pytest.approx(-1.0)


def test_box_clips_the_minimum():
    problem = QpProblem(H=np.eye(2), f=[-2.0, -2.0], lb=[0.0, 0.0], ub=[1.0, 1.0])
    solution = solve(problem)
    np.testing.assert_allclose(solution.x, [1.0, 1.0], atol=1e-10)
    np.testing.assert_allclose(solution.dual_bounds, [-1.0, -1.0], atol=1e-8)
    assert_kkt(problem, solution)


def test_equality_constraint():
    problem = QpProblem(H=np.eye(2), f=[0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[2.0])
    solution = solve(problem)
    np.testing.assert_allclose(solution.x, [1.0, 1.0], atol=1e-10)
    np.testing.assert_allclose(solution.dual_eq, [1.0], atol=1e-8)


def test_general_inequality_is_active():
    problem = QpProblem(H=np.eye(2), f=[0.0, 0.0], A_in=[[1.0, 0.0]], b_in=[0.5])
    solution = solve(problem)
    np.testing.assert_allclose(solution.x, [0.5, 0.0], atol=1e-10)
    assert solution.dual_in[0] == pytest.approx(0.5)
    assert solution.active_set == [0]


def test_infeasible_problem():
    problem = QpProblem(H=np.eye(1), f=[0.0], A_in=[[1.0]], b_in=[2.0], ub=[1.0])
    solution = solve(problem)
    assert solution.status is QpStatus.INFEASIBLE
    assert np.all(np.isnan(solution.x))
    assert phase_one(problem, SolverOptions()) is None


def test_lower_above_upper_rejected():
    with pytest.raises(ValueError):
        QpProblem(H=np.eye(1), f=[0.0], lb=[1.0], ub=[0.0])


def test_semidefinite_hessian_is_regularised():
    problem = QpProblem(H=np.diag([1.0, 0.0]), f=[-1.0, 1.0], lb=[-5.0, -5.0], ub=[5.0, 5.0])
    solution = solve(problem)
    assert solution.optimal
    np.testing.assert_allclose(solution.x, [1.0, -5.0], atol=1e-6)


def test_feasible_start_point_is_used():
    problem = QpProblem(H=np.eye(2), f=[-2.0, -2.0], lb=[0.0, 0.0], ub=[1.0, 1.0])
    start = np.array([0.5, 0.5])
    solution = solve(problem, x0=start)
    np.testing.assert_allclose(solution.x, [1.0, 1.0], atol=1e-10)
    outside = solve(problem, x0=np.array([3.0, -3.0]))
    np.testing.assert_allclose(outside.x, [1.0, 1.0], atol=1e-10)


def test_iteration_cap():
    rng = np.random.default_rng(7)
    problem = random_problem(rng, 20)
    solution = solve(problem, SolverOptions(max_iter=1))
    assert solution.iterations <= 1
    if not solution.optimal:
        assert solution.status is QpStatus.MAX_ITER
        assert primal_residual(problem, solution.x) <= 1e-6


def test_random_problems_satisfy_kkt():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        problem = random_problem(rng, int(rng.integers(1, 31)))
        assert_kkt(problem, solve(problem))


def test_not_worse_than_slsqp():
    rng = np.random.default_rng(99)
    for _ in range(30):
        problem = random_problem(rng, int(rng.integers(2, 12)))
        ours = solve(problem)
        constraints = []
        if problem.A_eq.shape[0]:
            constraints.append({"type": "eq", "fun": lambda x, p=problem: p.A_eq @ x - p.b_eq,
                                "jac": lambda x, p=problem: p.A_eq})
        if problem.A_in.shape[0]:
            constraints.append({"type": "ineq", "fun": lambda x, p=problem: p.A_in @ x - p.b_in,
                                "jac": lambda x, p=problem: p.A_in})
        reference = minimize(
            problem.objective,
            x0=0.5 * (problem.lb + problem.ub),
            jac=lambda x, p=problem: p.H @ x + p.f,
            bounds=list(zip(problem.lb, problem.ub)),
            constraints=constraints,
            method="SLSQP",
            options={"ftol": 1e-12, "maxiter": 500},
        )
        if not reference.success or primal_residual(problem, reference.x) > 1e-6:
            continue
        assert ours.objective <= reference.fun + 1e-6 * max(1.0, abs(reference.fun))


def test_deterministic():
    rng = np.random.default_rng(5)
    problem = random_problem(rng, 15)
    first, second = solve(problem), solve(problem)
    np.testing.assert_array_equal(first.x, second.x)
    assert first.active_set == second.active_set
    assert first.iterations == second.iterations
