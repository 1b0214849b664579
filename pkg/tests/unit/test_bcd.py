from unittest.mock import patch

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.covariance.bcd import (
    BcdSolver,
    column_qp,
    dual_objective_trace,
    lasso_dual_solve,
    lasso_value,
    qp_value,
    soft_threshold,
    solve_bcd,
)
from src.covariance.exceptions import ConvergenceError, InnerConvergenceError, NumericError
from src.covariance.model import cholesky, duality_gap, screening_diagonal_columns, zero_threshold
from src.covariance.schemas import BcdOptions, ColumnWorkspace, SolverKind
from tests.conftest import make_problem, random_moment, random_spd

OPTS = BcdOptions(qp_tol=1e-13)


def test_soft_threshold():
    assert_allclose(soft_threshold(np.array([0.8, -0.8, 0.2]), 0.3), [0.5, -0.5, 0.0])


def test_identity_is_fixed_point():
    est = solve_bcd(make_problem(np.eye(3), 0.5))

    assert_allclose(est.W, 1.5 * np.eye(3))
    assert est.gap == pytest.approx(0.0, abs=1e-12)
    assert est.iterations == 1
    assert est.solver is SolverKind.BCD


@pytest.mark.parametrize("lam", [0.1, 0.3, 1.0])
@pytest.mark.parametrize("s12", [0.0, 0.2, -0.2, 0.8, -0.8])
def test_two_variables_soft_threshold(s12, lam):
    S = np.array([[1.0, s12], [s12, 1.0]])
    est = solve_bcd(make_problem(S, lam))

    expected = float(soft_threshold(s12, lam))
    assert est.W[0, 1] == pytest.approx(expected, abs=1e-10)
    assert_allclose(est.W.diagonal(), 1.0 + lam, atol=1e-15)
    W = np.array([[1.0 + lam, expected], [expected, 1.0 + lam]])
    assert_allclose(est.X, np.linalg.inv(W), atol=1e-6)


def test_diagonal_is_s_plus_lambda():
    moment = random_moment(5, 40, seed=2)
    est = solve_bcd(make_problem(moment.S, 0.15))
    assert_allclose(est.W.diagonal() - moment.S.diagonal(), 0.15, atol=1e-15)


def test_converged_gap_is_reported_gap():
    moment = random_moment(5, 40, seed=3)
    prob = make_problem(moment.S, 0.1, epsilon=1e-7)
    est = solve_bcd(prob)

    assert est.converged
    assert est.gap <= prob.epsilon
    assert est.gap == pytest.approx(duality_gap(est.W, prob), abs=1e-10)
    assert np.max(np.abs(est.W - moment.S)) <= 0.1 + 1e-12


def test_lasso_zero_rhs():
    Q = random_spd(3, seed=0)
    assert_allclose(lasso_dual_solve(Q, np.zeros(3), 0.2, OPTS), 0.0)


@pytest.mark.parametrize("s", [1.0, -0.7, 0.1])
def test_lasso_scalar(s):
    w, lam = 2.0, 0.25
    x = lasso_dual_solve(np.array([[w]]), np.array([s]), lam, OPTS)
    assert x[0] == pytest.approx(soft_threshold(s, lam) / (2 * w))


def test_lasso_subgradient_conditions():
    Q = random_spd(5, seed=8)
    s = np.random.default_rng(8).normal(size=5)
    lam = 0.3
    x = lasso_dual_solve(Q, s, lam, OPTS)

    grad = 2 * Q @ x - s
    nz = x != 0
    assert_allclose(grad[nz], -lam * np.sign(x[nz]), atol=1e-9)
    assert np.all(np.abs(grad[~nz]) <= lam + 1e-9)


def test_lasso_beats_perturbations():
    Q = random_spd(5, seed=12)
    s = np.random.default_rng(12).normal(size=5)
    x = lasso_dual_solve(Q, s, 0.2, OPTS)
    best = lasso_value(Q, s, 0.2, x)

    rng = np.random.default_rng(13)
    for _ in range(200):
        assert lasso_value(Q, s, 0.2, x + 1e-3 * rng.normal(size=5)) >= best - 1e-12


def test_column_qp_scalar_is_soft_threshold():
    minor = np.array([[1.7]])
    ws = ColumnWorkspace(minor=minor, minor_factor=cholesky(minor), rhs=np.array([0.9]), radius=0.4)
    y = column_qp(ws, 0.4, OPTS)
    assert y[0] == pytest.approx(0.5)


def test_column_qp_matches_projected_gradient():
    minor = random_spd(4, seed=5)
    rhs = np.random.default_rng(5).normal(size=4)
    lam = 0.3
    ws = ColumnWorkspace(minor=minor, minor_factor=cholesky(minor), rhs=rhs, radius=lam)
    y = column_qp(ws, lam, OPTS)

    inv = np.linalg.inv(minor)
    z = np.clip(np.zeros(4), rhs - lam, rhs + lam)
    step = 0.5 / np.linalg.eigvalsh(inv)[-1]
    for _ in range(20000):
        z = np.clip(z - step * 2 * inv @ z, rhs - lam, rhs + lam)
    assert_allclose(y, z, atol=1e-8)


def test_qp_and_lasso_values_agree():
    minor = random_spd(4, seed=6)
    rhs = np.random.default_rng(6).normal(size=4)
    lam = 0.2
    ws = ColumnWorkspace(minor=minor, minor_factor=cholesky(minor), rhs=rhs, radius=lam)
    y = column_qp(ws, lam, OPTS)
    x = ws.warm_start

    # y^T W^-1 y / 4 = -min_x lasso(x) by strong duality
    assert qp_value(ws, y) / 4 == pytest.approx(-lasso_value(minor, rhs, lam, x), abs=1e-8)


def test_dual_objective_is_monotone():
    moment = random_moment(6, 30, seed=14)
    trace = dual_objective_trace(make_problem(moment.S, 0.05, epsilon=1e-8))
    assert len(trace) > 6
    assert np.all(np.diff(trace) >= -1e-12)


def test_screened_columns_zero_after_first_sweep():
    S = np.array(random_moment(5, 50, seed=17).S)
    S[4, :4] = S[:4, 4] = 0.0
    prob = make_problem(S, 0.05, epsilon=1e-14)
    assert 4 in screening_diagonal_columns(prob)

    solver = BcdSolver(prob, BcdOptions(max_sweeps=1))
    with pytest.raises(ConvergenceError) as info:
        solver.solve()
    X = info.value.estimate.X
    assert np.max(np.abs(X[4, :4])) <= zero_threshold(X)


def test_convergence_error_keeps_last_iterate():
    moment = random_moment(8, 20, seed=1)
    prob = make_problem(moment.S, 0.01, epsilon=1e-14)

    with pytest.raises(ConvergenceError) as info:
        solve_bcd(prob, BcdOptions(max_sweeps=1))
    last = info.value.estimate
    assert not last.converged
    assert last.iterations == 1
    assert info.value.gap == last.gap


def test_warm_start_reaches_same_solution():
    moment = random_moment(5, 40, seed=19)
    cold = solve_bcd(make_problem(moment.S, 0.1, epsilon=1e-9))
    warm = solve_bcd(make_problem(moment.S, 0.12, epsilon=1e-9), W0=cold.W)
    again = solve_bcd(make_problem(moment.S, 0.12, epsilon=1e-9))
    assert_allclose(warm.X, again.X, atol=1e-6)


def test_column_qp_residual_is_within_tolerance():
    minor = random_spd(6, seed=21)
    rhs = np.random.default_rng(21).normal(size=6)
    lam = 0.15
    ws = ColumnWorkspace(minor=minor, minor_factor=cholesky(minor), rhs=rhs, radius=lam)
    y = column_qp(ws, lam, BcdOptions())
    x = ws.warm_start

    d = 2 * minor @ x - rhs
    nz = x != 0
    assert np.all(np.abs(d[nz] + lam * np.sign(x[nz])) <= 1e-10 * max(1.0, np.max(np.abs(rhs))))
    assert np.all(np.abs(y - rhs) <= lam + 1e-15)


def test_column_qp_under_iteration_cap_raises():
    minor = random_spd(5, seed=22)
    rhs = np.random.default_rng(22).normal(size=5) + 1.0
    ws = ColumnWorkspace(minor=minor, minor_factor=cholesky(minor), rhs=rhs, radius=0.1)

    with pytest.raises(InnerConvergenceError) as info:
        column_qp(ws, 0.1, BcdOptions(qp_max_iter=1, qp_tol=1e-14))
    assert info.value.max_iter == 1
    assert ws.warm_start is None


def test_column_qp_rejects_non_optimal_inner_solution():
    minor = random_spd(3, seed=23)
    rhs = np.array([0.9, -0.6, 0.5])
    ws = ColumnWorkspace(minor=minor, minor_factor=cholesky(minor), rhs=rhs, radius=0.1)

    # x = 0 leaves y = 0 outside the box around rhs
    with patch("src.covariance.bcd.lasso_dual_solve", return_value=np.zeros(3)):
        with pytest.raises(NumericError):
            column_qp(ws, 0.1, OPTS)


def test_loose_inner_tolerance_still_meets_residual_bound():
    minor = random_spd(6, seed=24, low=2.0, high=20.0)
    rhs = np.random.default_rng(24).normal(size=6)
    opts = BcdOptions(qp_tol=1e-3)
    x = lasso_dual_solve(minor, rhs, 0.05, opts)

    d = 2 * minor @ x - rhs
    nz = x != 0
    bound = 1e-3 * max(1.0, np.max(np.abs(rhs)))
    assert np.all(np.abs(d[nz] + 0.05 * np.sign(x[nz])) <= bound + 1e-12)
    assert np.all(np.abs(d[~nz]) <= 0.05 + bound + 1e-12)


@pytest.mark.slow
def test_sweep_count_does_not_grow_with_p():
    sweeps = []
    for p in (20, 50, 100):
        moment = random_moment(p, 4 * p, seed=p)
        est = solve_bcd(make_problem(moment.S, 0.1, epsilon=1e-6))
        sweeps.append(est.iterations)
    assert max(sweeps) <= 3 * sweeps[0]
