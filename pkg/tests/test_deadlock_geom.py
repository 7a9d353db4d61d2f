import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deadlock_free.cbf_core import (AgentState, ControlAffine, ControllerParams,
                                    SINGLE_INTEGRATOR_2D, h_pair)
from deadlock_free.deadlock_geom import (aux_cbf, collinearity, collinearity_grads,
                                         equilibrium_diagnostics, psi_fn)
from deadlock_free.linalg_so import integrate_rotation, rotation_2d


def agent(x, goal=(0.0, 0.0), **kw):
    return AgentState(np.asarray(x, float), np.asarray(goal, float), **kw)


def _nonlinear_dynamics():
    def f(x):
        return np.array([0.3 * np.sin(x[1]), -0.2 * x[0] + 0.1 * x[0] * x[1]])

    def df(x):
        return np.array([[0.0, 0.3 * np.cos(x[1])],
                         [-0.2 + 0.1 * x[1], 0.1 * x[0]]])

    def g(x):
        return np.array([[1.0 + 0.1 * x[0] ** 2, 0.2 * x[1]],
                         [0.1 * np.sin(x[0]), 1.5 + 0.05 * x[0] * x[1]]])

    def dg(x):
        c0 = np.array([[0.2 * x[0], 0.0], [0.1 * np.cos(x[0]), 0.0]])
        c1 = np.array([[0.0, 0.2], [0.05 * x[1], 0.05 * x[0]]])
        return [c0, c1]

    return ControlAffine(f, g, df, dg, d=2, m=2)


NONLINEAR = _nonlinear_dynamics()


def test_psi_properties():
    p = ControllerParams()
    assert psi_fn(0.0, p) == (1.0, 0.0)
    assert psi_fn(-3.0, p) == (1.0, 0.0)
    psi, dpsi = psi_fn(p.psi_scale, p)
    assert psi == pytest.approx(math.exp(-1))
    assert dpsi == pytest.approx(-2 * math.exp(-1) / p.psi_scale)
    assert psi_fn(10.0, p)[0] < 1e-40
    hs = np.linspace(0.01, 5, 50)
    vals = [psi_fn(h, p)[0] for h in hs]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_collinearity_examples():
    # grad V_q = (1, 0) needs x - goal = (0.5, 0); grad h = (0, 2) needs x - x_j = (0, 1)
    a = agent((0.5, 0.0), (0.0, 0.0))
    assert collinearity(a, agent((0.5, -1.0))) == pytest.approx(2.0)
    assert collinearity(a, agent((0.5, 1.0))) == pytest.approx(2.0)
    assert collinearity(agent((1.0, 0.0), (5.0, 0.0)), agent((-2.0, 0.0))) == 0.0


def test_collinearity_detects_parallel_gradients():
    # single integrator in the plane: D = 1/2 (grad V_q ^ grad h)^2
    rng = np.random.default_rng(2)
    for k in range(1000):
        x, xj, goal = rng.uniform(-10, 10, (3, 2))
        if k % 3 == 0:
            xj = x + rng.uniform(-3, 3) * (goal - x)
        D = collinearity(agent(x, goal), agent(xj))
        av, bv = 2 * (x - goal), 2 * (x - xj)
        cross = av[0] * bv[1] - av[1] * bv[0]
        assert D >= -1e-9
        scale = (av @ av) * (bv @ bv)
        assert D == pytest.approx(0.5 * cross**2, rel=1e-9, abs=1e-13 * scale)
        if k % 3 == 0:
            assert D < 1e-10 * (1 + scale)


def test_far_pair_is_annihilated():
    p = ControllerParams()
    geo = aux_cbf(agent((-10.0, 0.0), (10.0, 1.0)), agent((10.0, 0.0)), p)
    assert geo.h == 396.0
    assert abs(geo.h_D) < 1e-100 * abs(geo.D - p.epsilon) + 1e-300


def test_h_d_zero_on_level_set():
    p = ControllerParams(epsilon=2.0)
    geo = aux_cbf(agent((0.5, 0.0), (0.0, 0.0)), agent((0.5, -1.0)), p)
    assert geo.D == pytest.approx(2.0)
    assert geo.h_D == pytest.approx(0.0, abs=1e-15)


def _fd(fun, x, eps):
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        out[k] = (fun(x + e) - fun(x - e)) / (2 * eps)
    return out


def _rel(a, b, floor):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


@pytest.mark.parametrize("dyn", [SINGLE_INTEGRATOR_2D, NONLINEAR], ids=["single", "nonlinear"])
def test_gradient_stack_matches_finite_differences(dyn):
    rng = np.random.default_rng(9)
    p = ControllerParams(psi_scale=3.0)
    worst = {"D": 0.0, "QD": 0.0, "hD": 0.0, "QhD": 0.0}
    for _ in range(1000):
        goal = rng.uniform(-5, 5, 2)
        x = rng.uniform(-5, 5, 2)
        # neighbour a few metres away so psi is neither 1 nor 0
        xj = x + rng.uniform(2.1, 3.5) * np.array([math.cos(t := rng.uniform(0, 6.3)), math.sin(t)])
        Q = rotation_2d(rng.uniform(-math.pi, math.pi))
        aj = agent(xj)
        geo = aux_cbf(agent(x, goal, Q=Q), aj, p, dyn)
        eps = 1e-6 * (1 + np.linalg.norm(x))

        def D_at(y):
            return collinearity(agent(y, goal, Q=Q), aj, dyn)

        def hD_at(y):
            return aux_cbf(agent(y, goal, Q=Q), aj, p, dyn).h_D

        def D_rot(s):
            return collinearity(agent(x, goal, Q=integrate_rotation(Q, 1.0, s)), aj, dyn)

        def hD_rot(s):
            return aux_cbf(agent(x, goal, Q=integrate_rotation(Q, 1.0, s)), aj, p, dyn).h_D

        scale_D = 1e-6 * max(abs(geo.D), 1.0)
        scale_h = 1e-6 * max(abs(geo.h_D), 1e-12)
        worst["D"] = max(worst["D"], _rel(geo.grad_D, _fd(D_at, x, eps), scale_D))
        worst["hD"] = max(worst["hD"], _rel(geo.grad_x_hD, _fd(hD_at, x, eps), scale_h))
        fdq = (D_rot(1e-6) - D_rot(-1e-6)) / 2e-6
        worst["QD"] = max(worst["QD"], _rel(geo.grad_Q_D, np.array([fdq]), scale_D))
        fdq = (hD_rot(1e-6) - hD_rot(-1e-6)) / 2e-6
        worst["QhD"] = max(worst["QhD"], _rel(geo.grad_Q_hD, np.array([fdq]), scale_h))
    assert max(worst.values()) < 1e-5, worst


def test_gradient_formula_reduces_for_single_integrator():
    # f = 0, g = I: grad D = H_a P_c w + H_h P_w c with a = grad V_q
    a = agent((1.0, 2.0), (4.0, -1.0), Q=rotation_2d(0.4))
    aj = agent((2.5, 3.0))
    D, gD, _, _ = collinearity_grads(a, aj)
    va = a.Q.T @ (2 * (a.Q @ a.x - a.goal))
    vb = 2 * (a.x - aj.x)
    Pc = (vb @ vb) * np.eye(2) - np.outer(vb, vb)
    Pw = (va @ va) * np.eye(2) - np.outer(va, va)
    np.testing.assert_allclose(gD, 2 * Pc @ va + 2 * Pw @ vb)
    assert D == pytest.approx(0.5 * va @ Pc @ va)


def _stall_pair():
    # agent pushed against a neighbour sitting on its path to the goal
    a = agent((0.0, 0.0), (10.0, 0.0))
    b = agent((2.0, 0.0))
    return a, b


def test_diagnostics_grad_h_zero_branch():
    p = ControllerParams()
    a = agent((1.0, 1.0), (4.0, 5.0))
    d = equilibrium_diagnostics(a, agent((1.0, 1.0)), p)
    assert d.grad_h_zero
    nV = 1 / p.p + 4 * 25.0
    assert d.lambda1 == d.F_V / nV
    assert d.lambda2 == 0.0


def test_diagnostics_moving_agent_not_near_equilibrium():
    p = ControllerParams()
    a = agent((-10.0, 0.0), (10.0, 0.0))
    d = equilibrium_diagnostics(a, agent((0.0, 8.0)), p, u=(5.0, 0.0))
    assert not d.near_boundary_equilibrium


def test_diagnostics_collinear_blocked_agent():
    p = ControllerParams()
    a, b = _stall_pair()
    d = equilibrium_diagnostics(a, b, p, u=(0.0, 0.0))
    assert d.lambda_defined
    assert d.lambda1 >= 0 and d.lambda2 >= 0
    assert d.near_boundary_equilibrium
    assert h_pair(a, b) == 0.0


def test_diagnostics_singular_delta_flagged():
    # at the goal Delta = -|grad h|^2 / p, which vanishes as p grows
    a = agent((0.0, 0.0), (0.0, 0.0))
    d = equilibrium_diagnostics(a, agent((2.0, 0.0)), ControllerParams(p=1e30))
    assert not d.lambda_defined
    assert math.isnan(d.lambda1) and math.isnan(d.lambda2)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_d_even_in_barrier_gradient(x1, x2, y1, y2):
    a = agent((x1, x2), (7.0, 3.0))
    # reflecting the neighbour through x flips grad h
    b1 = agent((y1, y2))
    b2 = agent((2 * x1 - y1, 2 * x2 - y2))
    assert collinearity(a, b1) == pytest.approx(collinearity(a, b2), rel=1e-9, abs=1e-9)
