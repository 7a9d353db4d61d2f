import numpy as np
import pytest

from deadlock_free.qp import (QpProblem, QpStatus, check_kkt, kkt_residuals,
                              oracle_solve, solve)


def random_instance(rng, n=None, k=None):
    n = n or int(rng.integers(1, 7))
    k = int(rng.integers(0, 13)) if k is None else k
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 3
    A = rng.normal(size=(k, n))
    b = rng.normal(size=k) + 0.5
    return QpProblem(H, f, A, b)


def test_unconstrained_origin():
    sol = solve(QpProblem(2 * np.eye(2), np.zeros(2), np.zeros((0, 2)), np.zeros(0)))
    assert sol.ok
    np.testing.assert_allclose(sol.z, 0.0)


def test_one_dimensional_bound():
    # min (z-1)^2  s.t. z <= 0  ->  z = 0, lambda = 2
    p = QpProblem([[2.0]], [-2.0], [[1.0]], [0.0])
    sol = solve(p)
    assert sol.ok
    assert sol.z[0] == pytest.approx(0.0, abs=1e-12)
    assert sol.multipliers[0] == pytest.approx(2.0)
    assert sol.active_set == (0,)


def test_oracle_closed_form_without_constraints():
    rng = np.random.default_rng(3)
    p = random_instance(rng, n=4, k=0)
    sol = oracle_solve(p)
    np.testing.assert_allclose(sol.z, -np.linalg.solve(p.H, p.f))


@pytest.mark.parametrize("solver", [solve, oracle_solve])
def test_empty_feasible_set(solver):
    # z <= -1 and z >= 1
    p = QpProblem([[2.0]], [0.0], [[1.0], [-1.0]], [-1.0, -1.0])
    assert solver(p).status is QpStatus.INFEASIBLE


def test_semidefinite_hessian_regularised():
    p = QpProblem(np.diag([2.0, 0.0]), [0.0, 1.0], [[0.0, -1.0]], [1.0])
    sol = solve(p)
    assert sol.ok
    assert sol.z[1] == pytest.approx(-1.0)


def test_warm_start_recovers_same_solution():
    rng = np.random.default_rng(11)
    for _ in range(50):
        p = random_instance(rng, n=3, k=5)
        cold = solve(p)
        if not cold.ok:
            continue
        warm = solve(p, warm_start=cold.active_set)
        assert warm.ok
        np.testing.assert_allclose(warm.z, cold.z, atol=1e-9)
        assert warm.iterations <= cold.iterations


def test_deterministic():
    rng = np.random.default_rng(5)
    p = random_instance(rng, n=5, k=10)
    a, b = solve(p), solve(p)
    assert a.status == b.status
    np.testing.assert_array_equal(a.z, b.z)
    assert a.active_set == b.active_set


def test_agrees_with_oracle_and_certifies_kkt():
    rng = np.random.default_rng(20240601)
    n_opt = 0
    for _ in range(1000):
        p = random_instance(rng)
        sol = solve(p)
        ref = oracle_solve(p)
        assert sol.status in (QpStatus.OPTIMAL, QpStatus.INFEASIBLE)
        assert sol.status == ref.status
        if sol.ok:
            n_opt += 1
            check_kkt(p, sol)
            assert p.objective(sol.z) == pytest.approx(p.objective(ref.z), abs=1e-6)
            assert p.k == 0 or sol.multipliers.min() >= -1e-9
    assert n_opt > 500


def test_kkt_residuals_detect_violation():
    p = QpProblem([[2.0]], [-2.0], [[1.0]], [0.0])
    stat, feas, comp = kkt_residuals(p, np.array([0.5]), np.array([0.0]))
    assert feas == pytest.approx(0.5)
    assert stat == pytest.approx(1.0)
