import math

import numpy as np
import pytest

from deadlock_free.cbf_core import ClassK, ControllerParams
from deadlock_free.controller import ControllerMode
from deadlock_free.sim import (AgentSpec, ConfigError, ScenarioConfig, add_static_obstacle,
                               detect_deadlock, make_ring_scenario, run)


def test_ring_geometry():
    cfg = make_ring_scenario(4, 10.0)
    np.testing.assert_allclose([a.position for a in cfg.agents],
                               [(-10, 0), (0, 10), (10, 0), (0, -10)], atol=1e-12)
    for a in cfg.agents:
        np.testing.assert_array_equal(a.goal, np.negative(a.position) + 0.0)


def test_ring_jitter_is_bounded_and_seeded():
    base = make_ring_scenario(8, 10.0)
    j1 = make_ring_scenario(8, 10.0, jitter_deg=10.0, seed=4)
    j2 = make_ring_scenario(8, 10.0, jitter_deg=10.0, seed=4)
    assert j1.agents == j2.agents
    for a, b in zip(base.agents, j1.agents):
        assert np.linalg.norm(b.position) == pytest.approx(10.0)
        (ax, ay), (bx, by) = a.position, b.position
        ang = math.atan2(ax * by - ay * bx, ax * bx + ay * by)
        assert abs(math.degrees(ang)) <= 10.0


def test_single_agent_matches_closed_form():
    p = ControllerParams(gamma=ClassK(0.8))
    cfg = ScenarioConfig(agents=(AgentSpec((3.0, -4.0), (1.0, 1.0)),),
                         mode=ControllerMode.BASELINE, params=p, max_steps=1500)
    log = run(cfg)
    # only the CLF row binds: u = -gamma V grad V / (|grad V|^2 + 1/p)
    e = np.array([2.0, -5.0])
    for k in range(log.steps):
        gV = 2 * e
        u = -0.8 * (e @ e) * gV / (gV @ gV + 1 / p.p)
        np.testing.assert_allclose(log.u[k, 0], u, rtol=1e-9, atol=1e-12)
        e = e + p.dt * u
    assert log.converged


def test_single_agent_adaptive_converges():
    cfg = ScenarioConfig(agents=(AgentSpec((3.0, -4.0), (1.0, 1.0)),), max_steps=2000)
    log = run(cfg)
    assert log.converged
    assert (log.risk == ControllerParams().phi).all()


def test_runs_are_deterministic():
    cfg = make_ring_scenario(4, 6.0, jitter_deg=5.0, seed=2, max_steps=150)
    a, b = run(cfg), run(cfg)
    for name in ("positions", "rotation", "u", "omega", "zeta", "risk", "h"):
        assert np.array_equal(getattr(a, name), getattr(b, name), equal_nan=True)


def test_static_obstacle_never_moves():
    cfg = add_static_obstacle(make_ring_scenario(4, 6.0, max_steps=100))
    log = run(cfg)
    np.testing.assert_array_equal(log.positions[:, -1], 0.0)
    assert not log.moving[-1]


@pytest.mark.parametrize("speeds, dist, expected", [
    (np.zeros((50, 2)), np.full((50, 2), 5.0), False),                  # window not filled
    (np.zeros((120, 2)), np.full((120, 2), 5.0), True),
    (np.zeros((120, 2)), np.full((120, 2), 0.05), False),              # at the goal
    (np.c_[np.zeros(120), np.r_[np.zeros(119), 0.5]], np.full((120, 2), 5.0), False),
    (np.r_[np.ones((30, 2)), np.zeros((100, 2))], np.full((130, 2), 5.0), True),
])
def test_detect_deadlock(speeds, dist, expected):
    assert detect_deadlock(speeds, dist, 0.1, 1e-3, 100) is expected


def _two(**kw):
    agents = (AgentSpec((-5.0, 0.0), (5.0, 1.0)), AgentSpec((5.0, 0.0), (-5.0, 1.0)))
    return ScenarioConfig(agents=agents, **kw)


@pytest.mark.parametrize("cfg, path", [
    (ScenarioConfig(agents=()), "agents"),
    (ScenarioConfig(agents=(AgentSpec((0.0, 0.0), (1.0, 1.0), radius=-1.0),)), "agents[0].radius"),
    (ScenarioConfig(agents=(AgentSpec((0.0, 0.0, 1.0), (1.0, 1.0)),)), "agents[0].position"),
    (ScenarioConfig(agents=(AgentSpec((0.0, 0.0), (1.0, 1.0)),
                            AgentSpec((1.0, 0.0), (2.0, 2.0)))), "agents[1].position"),
    (ScenarioConfig(agents=(AgentSpec((3.0, 0.0), (0.0, 0.0)),)), "agents[0].goal"),
    (_two(max_steps=0), "max_steps"),
    (_two(stall_window=0), "stall_window"),
])
def test_config_validation(cfg, path):
    with pytest.raises(ConfigError) as err:
        cfg.validate()
    assert err.value.path == path


def test_origin_goal_allowed_in_baseline():
    cfg = ScenarioConfig(agents=(AgentSpec((3.0, 0.0), (0.0, 0.0)),),
                         mode=ControllerMode.BASELINE)
    cfg.validate()


def test_log_shapes_and_summary():
    cfg = make_ring_scenario(3, 6.0, max_steps=40)
    log = run(cfg)
    T = log.steps
    assert log.positions.shape == (T + 1, 3, 2)
    assert log.zeta.shape == (T, 3)
    assert log.h.shape == (T, 3, 3)
    s = log.summary()
    assert s["N"] == 3 and s["steps"] == T
    assert s["min_safety"] >= -1e-3
