import math
import warnings

import numpy as np
import pytest

from mmtfl.core import loss_and_gradient
from mmtfl.solvers import (
    ConvergenceWarning,
    SolverOptions,
    _logistic_l1,
    kkt_residual,
    soft_threshold,
    solve_lasso_ls,
    solve_logistic_l1,
    solve_logistic_l2,
    solve_ridge_ls,
    solve_subproblem,
)

# root of -2 sigmoid(-b) + 2 b = 0, found by bisection
LOGISTIC_L2_ROOT = 0.40105813754154745
# argmin of sum log(1+exp(-y x b)) + |b| on X=(1,2,-1), y=(1,1,-1), dense grid of step 1e-6
LOGISTIC_L1_GRID = 0.756308


def labels(rng, n):
    return np.where(rng.random(n) < 0.5, -1.0, 1.0)


def prox_grad_oracle(X, y, g1, iters=200000):
    """Plain ISTA with a fixed 1/L step."""
    L = 2 * np.linalg.norm(X, 2) ** 2
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        b = soft_threshold(b - 2 * X.T @ (X @ b - y) / L, g1 / L)
    return b


def lasso_obj(b, X, y, g1):
    r = X @ b - y
    return float(r @ r) + g1 * float(np.abs(b).sum())


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(-4.0, 1.5) == -2.5
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol=0)
    with pytest.raises(ValueError):
        SolverOptions(max_inner_iters=0)


def test_ridge_examples():
    assert solve_ridge_ls(np.array([[1.0]]), np.array([2.0]), 1.0) == pytest.approx([1.0])
    np.testing.assert_array_equal(solve_ridge_ls(np.ones((4, 3)), np.zeros(4), 0.5), np.zeros(3))


@pytest.mark.parametrize("n,d", [(20, 5), (10, 40), (150, 100)])
def test_ridge_matches_normal_equations(n, d):
    rng = np.random.default_rng(n + d)
    X = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    g1 = 0.3
    oracle = np.linalg.solve(X.T @ X + g1 * np.eye(d), X.T @ y)
    b = solve_ridge_ls(X, y, g1)
    np.testing.assert_allclose(b, oracle, rtol=1e-8, atol=1e-10)
    assert kkt_residual(b, X, y, "least-squares", 2, g1) <= 1e-10


def test_lasso_examples():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((12, 4))
    y = rng.standard_normal(12)
    big = 2 * np.abs(X.T @ y).max()
    np.testing.assert_array_equal(solve_lasso_ls(X, y, big), np.zeros(4))
    assert kkt_residual(np.zeros(4), X, y, "least-squares", 1, big) == 0
    assert solve_lasso_ls(np.array([[1.0]]), np.array([2.0]), 2.0) == pytest.approx([1.0], abs=1e-12)


@pytest.mark.parametrize("shape,g1", [((30, 8), 3.0), ((30, 8), 0.05), ((15, 40), 0.5)])
def test_lasso_matches_proximal_gradient(shape, g1):
    rng = np.random.default_rng(sum(shape))
    X = rng.standard_normal(shape)
    y = X[:, :3] @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.standard_normal(shape[0])
    b = solve_lasso_ls(X, y, g1)
    oracle = prox_grad_oracle(X, y, g1)
    assert lasso_obj(b, X, y, g1) <= lasso_obj(oracle, X, y, g1) + 1e-6
    assert abs(lasso_obj(b, X, y, g1) - lasso_obj(oracle, X, y, g1)) <= 1e-6
    assert kkt_residual(b, X, y, "least-squares", 1, g1) <= 1e-8


def test_l1_norm_monotone_in_gamma():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((25, 10))
    y = rng.standard_normal(25)
    yl = np.sign(y)
    for solver, target in ((solve_lasso_ls, y), (solve_logistic_l1, yl)):
        norms = [float(np.abs(solver(X, target, g)).sum()) for g in np.logspace(-2, 2, 15)]
        assert all(b <= a + 1e-8 for a, b in zip(norms, norms[1:]))


def test_logistic_l2_examples():
    X = np.array([[1.0], [-1.0]])
    y = np.array([1.0, -1.0])
    assert solve_logistic_l2(X, y, 1.0)[0] == pytest.approx(LOGISTIC_L2_ROOT, abs=1e-10)
    np.testing.assert_array_equal(solve_logistic_l2(np.zeros((5, 2)), np.ones(5), 1.0), np.zeros(2))


def test_logistic_l2_random_certificate():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((40, 6))
    y = labels(rng, 40)
    b = solve_logistic_l2(X, y, 0.2)
    assert kkt_residual(b, X, y, "logistic", 2, 0.2) <= 1e-8


def test_logistic_l1_examples():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((30, 5))
    y = labels(rng, 30)
    _, g0 = loss_and_gradient(np.zeros(5), X, y, "logistic")
    np.testing.assert_array_equal(solve_logistic_l1(X, y, float(np.abs(g0).max())), np.zeros(5))
    b = solve_logistic_l1(np.array([[1.0], [2.0], [-1.0]]), np.array([1.0, 1.0, -1.0]), 1.0)
    assert b[0] == pytest.approx(LOGISTIC_L1_GRID, abs=1e-4)


def test_logistic_l1_objective_never_increases():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((50, 20))
    y = labels(rng, 50)
    trace = []
    info = _logistic_l1(X, y, 0.5, SolverOptions(), trace=trace)
    assert info.converged
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_kkt_residual_grows_away_from_optimum():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((20, 5))
    y = rng.standard_normal(20)
    b = solve_ridge_ls(X, y, 1.0)
    e = rng.standard_normal(5)
    res = [kkt_residual(b + t * e, X, y, "least-squares", 2, 1.0) for t in (0, 1e-4, 1e-3, 1e-2, 1e-1)]
    assert all(b2 > a for a, b2 in zip(res, res[1:]))


def test_nonconvergence_is_flagged():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((30, 10))
    y = labels(rng, 30)
    opts = SolverOptions(tol=1e-14, max_inner_iters=2)
    info = solve_subproblem(X, y, 0.01, "logistic", 1, opts)
    assert not info.converged
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.raises(ConvergenceWarning):
            solve_logistic_l1(X, y, 0.01, opts)


@pytest.mark.parametrize("loss,p", [("least-squares", 2), ("least-squares", 1), ("logistic", 2), ("logistic", 1)])
def test_dispatch_is_certified_and_deterministic(loss, p):
    rng = np.random.default_rng(9)
    X = rng.standard_normal((35, 12))
    y = rng.standard_normal(35)
    if loss == "logistic":
        y = np.sign(y)
    a = solve_subproblem(X, y, 0.7, loss, p)
    b = solve_subproblem(X, y, 0.7, loss, p)
    assert a.converged and a.kkt <= 1e-8
    assert math.isclose(a.kkt, kkt_residual(a.beta, X, y, loss, p, 0.7), rel_tol=1e-9, abs_tol=1e-15)
    np.testing.assert_array_equal(a.beta, b.beta)
    with pytest.raises(ValueError):
        solve_subproblem(X, y, 0.7, loss, 3)
