"""Discrete-time multi-agent simulation with single-integrator agents."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .cbf_core import (SINGLE_INTEGRATOR_2D, AgentState, ControllerParams,
                       SingleIntegrator, clf_q_value, clf_value, h_pair)
from .controller import ControlDecision, ControllerMode, decide
from .linalg_so import integrate_rotation, omega_dim


class ConfigError(ValueError):
    """Invalid scenario; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class AgentSpec:
    position: tuple
    goal: tuple
    radius: float = 1.0
    static: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    agents: tuple
    mode: ControllerMode = ControllerMode.ADAPTIVE
    params: ControllerParams = field(default_factory=ControllerParams)
    d: int = 2
    max_steps: int = 5000
    goal_tolerance: float = 0.1
    v_stall: float = 1e-3
    stall_window: int = 100
    stop_on_deadlock: bool = True
    seed: int = 0
    name: str = "scenario"

    @property
    def N(self) -> int:
        return len(self.agents)

    @property
    def dt(self) -> float:
        return self.params.dt

    def with_mode(self, mode) -> "ScenarioConfig":
        return replace(self, mode=ControllerMode.parse(mode))

    def validate(self) -> None:
        if self.N < 1:
            raise ConfigError("agents", "at least one agent is required")
        if self.d != 2:
            raise ConfigError("d", "simulation supports d = 2 only")
        for k, a in enumerate(self.agents):
            if len(a.position) != self.d:
                raise ConfigError(f"agents[{k}].position", f"expected {self.d} coordinates")
            if len(a.goal) != self.d:
                raise ConfigError(f"agents[{k}].goal", f"expected {self.d} coordinates")
            if not all(math.isfinite(v) for v in (*a.position, *a.goal)):
                raise ConfigError(f"agents[{k}]", "coordinates must be finite")
            if not a.radius > 0:
                raise ConfigError(f"agents[{k}].radius", "must be positive")
            if (self.mode is not ControllerMode.BASELINE and not a.static
                    and np.linalg.norm(a.goal) < 1e-9):
                # V(Qx) = V(x) for every Q when the goal sits at the origin
                raise ConfigError(f"agents[{k}].goal",
                                  "goal at the rotation origin makes the rotated CLF radial")
        for i in range(self.N):
            for j in range(i + 1, self.N):
                ai, aj = self.agents[i], self.agents[j]
                dist2 = float(np.sum((np.subtract(ai.position, aj.position)) ** 2))
                if dist2 - (ai.radius + aj.radius) ** 2 <= 0:
                    raise ConfigError(f"agents[{j}].position",
                                      f"overlaps agent {i} at the initial time")
        if not self.max_steps > 0:
            raise ConfigError("max_steps", "must be positive")
        if not self.goal_tolerance > 0:
            raise ConfigError("goal_tolerance", "must be positive")
        if self.stall_window < 1:
            raise ConfigError("stall_window", "must be >= 1")


def make_ring_scenario(N: int, radius: float = 10.0, params: ControllerParams | None = None,
                       mode=ControllerMode.ADAPTIVE, agent_radius: float = 1.0,
                       jitter_deg: float = 0.0, seed: int = 0,
                       **kwargs) -> ScenarioConfig:
    """N agents evenly spaced on a circle, each heading to its antipode.

    Agent k starts at angle pi + 2 pi k / N (measured clockwise), so N = 4,
    radius = 10 gives (-10, 0), (0, 10), (10, 0), (0, -10).  ``jitter_deg``
    perturbs each angle uniformly in +-jitter_deg using ``seed``; draws that
    would overlap two agents are redrawn from the same generator.
    """
    if N < 2:
        raise ValueError("a ring needs at least two agents")
    rng = np.random.default_rng(seed)
    nominal = math.pi - 2.0 * math.pi * np.arange(N) / N
    angles = nominal
    if jitter_deg:
        for _ in range(1000):
            angles = nominal + np.deg2rad(rng.uniform(-jitter_deg, jitter_deg, size=N))
            ordered = np.sort(np.mod(angles, 2.0 * math.pi))
            gaps = np.diff(np.r_[ordered, ordered[0] + 2.0 * math.pi])
            if 2.0 * radius * math.sin(gaps.min() / 2.0) > 2.0 * agent_radius:
                break
        else:
            raise ValueError("jitter too large for this ring")
    agents = []
    for th in angles:
        p = (radius * math.cos(th), radius * math.sin(th))
        p = tuple(0.0 if abs(v) < 1e-12 else float(v) for v in p)
        agents.append(AgentSpec(position=p, goal=(0.0 - p[0], 0.0 - p[1]),
                                radius=agent_radius))
    return ScenarioConfig(agents=tuple(agents), mode=ControllerMode.parse(mode),
                          params=params or ControllerParams(), seed=seed,
                          name=kwargs.pop("name", f"ring{N}"), **kwargs)


def add_static_obstacle(cfg: ScenarioConfig, position=(0.0, 0.0),
                        radius: float = 1.0) -> ScenarioConfig:
    obstacle = AgentSpec(position=tuple(position), goal=tuple(position),
                         radius=radius, static=True)
    return replace(cfg, agents=cfg.agents + (obstacle,), name=cfg.name + "+obstacle")


@dataclass
class World:
    agents: tuple
    t: int = 0
    disengaged: list = field(default_factory=list)
    warm: dict = field(default_factory=dict)


def initial_world(cfg: ScenarioConfig) -> World:
    agents = tuple(AgentState(x=a.position, goal=a.goal, radius=a.radius, static=a.static)
                   for a in cfg.agents)
    return World(agents=agents, disengaged=[0] * len(agents))


def _static_decision(ai: AgentState, snapshot, i, params) -> ControlDecision:
    d = ai.d
    hs = {j: h_pair(ai, aj) for j, aj in enumerate(snapshot) if j != i}
    return ControlDecision(u=np.zeros(d), omega=np.zeros(omega_dim(d)), delta=0.0,
                           zeta=0.0, risk=float("nan"), qp_status=None, active_set=(),
                           fallback_used=False, h=hs, h_D={}, D={})


def step(world: World, mode, params: ControllerParams, dyn=SINGLE_INTEGRATOR_2D,
         order: Sequence[int] | None = None):
    """Advance one step; returns (new_world, decisions).

    Every decision is computed from the same snapshot, so ``order`` (the
    evaluation order) cannot influence the result.
    """
    mode = ControllerMode.parse(mode)
    snapshot = world.agents
    N = len(snapshot)
    order = range(N) if order is None else order
    decisions: list = [None] * N
    for i in order:
        ai = snapshot[i]
        if ai.static:
            decisions[i] = _static_decision(ai, snapshot, i, params)
            continue
        decisions[i] = decide(i, snapshot, mode, params,
                              warm_start=world.warm.get(i), dyn=dyn)

    new_agents = []
    disengaged = list(world.disengaged)
    warm = dict(world.warm)
    for i, (ai, dec) in enumerate(zip(snapshot, decisions)):
        if ai.static:
            new_agents.append(ai)
            continue
        x = ai.x + params.dt * dyn.velocity(ai.x, dec.u)
        Q = ai.Q
        if mode is not ControllerMode.BASELINE:
            Q = integrate_rotation(Q, dec.omega, params.dt)
            if _resolution_idle(i, snapshot, dec, params, dyn):
                disengaged[i] += 1
            else:
                disengaged[i] = 0
            if disengaged[i] >= params.reset_window:
                Q = np.eye(ai.d)
        new_agents.append(ai.evolve(x=x, Q=Q, last_u=dec.u, last_omega=dec.omega))
        if dec.fallback_used:
            warm.pop(i, None)
        else:
            warm[i] = dec.active_labels
    return World(agents=tuple(new_agents), t=world.t + 1, disengaged=disengaged,
                 warm=warm), decisions


def _resolution_idle(i: int, snapshot, dec: ControlDecision, params: ControllerParams,
                     dyn=SINGLE_INTEGRATOR_2D) -> bool:
    """Whether agent i's virtual rotation has nothing left to do this step.

    Under the "idle" rule that also holds when only the CLF row binds (the
    agent moves freely), or once it has essentially reached its rotated
    goal (V(Qx) small next to V(x)).
    """
    if dec.zeta < params.zeta_floor:
        return True
    if params.reset_rule == "zeta" or dec.fallback_used:
        return False
    if all(lbl[0] == "clf" for lbl in dec.active_labels):
        return True
    ai = snapshot[i]
    return clf_q_value(ai) <= params.reset_ratio * clf_value(ai)


@dataclass
class TrajectoryLog:
    """Per-step arrays (index 0 is the initial state for positions/Q angle)."""
    config: ScenarioConfig
    positions: np.ndarray        # (T+1, N, d)
    rotation: np.ndarray         # (T+1, N) rotation angle of Q_i
    u: np.ndarray                # (T, N, d)
    omega: np.ndarray            # (T, N, r)
    delta: np.ndarray            # (T, N)
    zeta: np.ndarray             # (T, N)
    risk: np.ndarray             # (T, N)
    fallback: np.ndarray         # (T, N) bool
    h: np.ndarray                # (T, N, N) pairwise barrier at the snapshot
    h_D: np.ndarray              # (T, N, N) agent i's auxiliary barrier vs j (nan: not evaluated)
    D: np.ndarray                # (T, N, N)
    statuses: list               # (T, N) QpStatus or None
    kkt_residual: np.ndarray     # (T, N)
    decisions: list | None = None
    converged: bool = False
    deadlock: bool = False
    steps: int = 0

    @property
    def moving(self) -> np.ndarray:
        return np.array([not a.static for a in self.config.agents])

    def goal_distances(self) -> np.ndarray:
        goals = np.array([a.goal for a in self.config.agents])
        return np.linalg.norm(self.positions - goals[None], axis=-1)

    def avg_goal_distance(self) -> np.ndarray:
        """Mean distance to goal over moving agents, per logged state."""
        return self.goal_distances()[:, self.moving].mean(axis=1)

    def min_h(self) -> np.ndarray:
        """Minimum pairwise barrier value per step."""
        N = self.h.shape[1]
        iu = np.triu_indices(N, 1)
        if len(iu[0]) == 0:
            return np.full(self.h.shape[0], np.inf)
        return self.h[:, iu[0], iu[1]].min(axis=1)

    def min_h_final(self) -> float:
        N = self.positions.shape[1]
        radii = np.array([a.radius for a in self.config.agents])
        x = self.positions[-1]
        best = np.inf
        for i in range(N):
            for j in range(i + 1, N):
                e = x[i] - x[j]
                best = min(best, float(e @ e - (radii[i] + radii[j]) ** 2))
        return best

    def min_safety(self) -> float:
        return float(min(self.min_h().min(initial=np.inf), self.min_h_final()))

    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.u, axis=-1)

    def path_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.positions, axis=0), axis=-1).sum(axis=0)

    def steps_to_convergence(self) -> int | None:
        """First step index at which every moving agent is within tolerance."""
        dist = self.goal_distances()[:, self.moving]
        ok = (dist <= self.config.goal_tolerance).all(axis=1)
        hits = np.flatnonzero(ok)
        return int(hits[0]) if hits.size else None

    def avg_zeta(self) -> np.ndarray:
        return self.zeta[:, self.moving].mean(axis=1)

    def summary(self) -> dict:
        avg = self.avg_goal_distance()
        return {
            "name": self.config.name,
            "mode": self.config.mode.value,
            "N": self.config.N,
            "steps": self.steps,
            "converged": bool(self.converged),
            "steps_to_convergence": self.steps_to_convergence(),
            "deadlock": bool(self.deadlock),
            "final_avg_goal_distance": float(avg[-1]),
            "min_safety": self.min_safety(),
            "fallback_count": int(self.fallback.sum()),
            "path_length": [float(v) for v in self.path_lengths()],
        }


def detect_deadlock(speeds: np.ndarray, goal_dist: np.ndarray, goal_tolerance: float,
                    v_stall: float, stall_window: int) -> bool:
    """Stall classifier over the trailing window of a run.

    ``speeds`` is (T, N) for moving agents and ``goal_dist`` (T, N) the goal
    distances after each of those steps.  True iff every agent moved slower
    than ``v_stall`` for the last ``stall_window`` steps while some agent is
    still farther than ``goal_tolerance`` from its goal.
    """
    speeds = np.asarray(speeds, dtype=float)
    goal_dist = np.asarray(goal_dist, dtype=float)
    if speeds.shape[0] < stall_window:
        return False
    window = speeds[-stall_window:]
    if not (window < v_stall).all():
        return False
    return bool((goal_dist[-1] > goal_tolerance).any())


def run(cfg: ScenarioConfig, dyn=SINGLE_INTEGRATOR_2D, keep_decisions: bool = False,
        world: World | None = None) -> TrajectoryLog:
    """Simulate until convergence, a detected deadlock, or ``max_steps``."""
    cfg.validate()
    params = cfg.params
    world = world or initial_world(cfg)
    N = cfg.N
    d = cfg.d
    r = omega_dim(d)
    T = cfg.max_steps
    moving = np.array([not a.static for a in cfg.agents])
    goals = np.array([a.goal for a in cfg.agents], dtype=float)

    positions = np.zeros((T + 1, N, d))
    rotation = np.zeros((T + 1, N))
    u = np.zeros((T, N, d))
    omega = np.zeros((T, N, r))
    delta = np.zeros((T, N))
    zeta = np.zeros((T, N))
    risk_arr = np.zeros((T, N))
    fallback = np.zeros((T, N), dtype=bool)
    h = np.zeros((T, N, N))
    h_D = np.full((T, N, N), np.nan)
    D = np.full((T, N, N), np.nan)
    kkt = np.full((T, N), np.nan)
    statuses = []
    decisions_log = [] if keep_decisions else None

    positions[0] = [a.x for a in world.agents]
    rotation[0] = [math.atan2(a.Q[1, 0], a.Q[0, 0]) for a in world.agents]
    converged = deadlock = False
    steps = 0
    for k in range(T):
        world, decs = step(world, cfg.mode, params, dyn)
        steps = k + 1
        positions[k + 1] = [a.x for a in world.agents]
        rotation[k + 1] = [math.atan2(a.Q[1, 0], a.Q[0, 0]) for a in world.agents]
        statuses.append([dec.qp_status for dec in decs])
        for i, dec in enumerate(decs):
            u[k, i] = dec.u
            omega[k, i] = dec.omega
            delta[k, i] = dec.delta
            zeta[k, i] = dec.zeta
            risk_arr[k, i] = dec.risk
            fallback[k, i] = dec.fallback_used
            kkt[k, i] = dec.kkt_residual
            for j, v in dec.h.items():
                h[k, i, j] = v
            for j, v in dec.h_D.items():
                h_D[k, i, j] = v
            for j, v in dec.D.items():
                D[k, i, j] = v
        if keep_decisions:
            decisions_log.append(decs)
        dist = np.linalg.norm(positions[k + 1] - goals, axis=1)[moving]
        if (dist <= cfg.goal_tolerance).all():
            converged = True
            break
        if cfg.stop_on_deadlock and steps >= cfg.stall_window and (steps % 10 == 0):
            gd = np.linalg.norm(positions[1:steps + 1] - goals[None], axis=-1)[:, moving]
            if detect_deadlock(np.linalg.norm(u[:steps], axis=-1)[:, moving], gd,
                               cfg.goal_tolerance, cfg.v_stall, cfg.stall_window):
                deadlock = True
                break
    if not converged and not deadlock:
        gd = np.linalg.norm(positions[1:steps + 1] - goals[None], axis=-1)[:, moving]
        deadlock = detect_deadlock(np.linalg.norm(u[:steps], axis=-1)[:, moving], gd,
                                   cfg.goal_tolerance, cfg.v_stall, cfg.stall_window)
    return TrajectoryLog(
        config=cfg, positions=positions[:steps + 1], rotation=rotation[:steps + 1],
        u=u[:steps], omega=omega[:steps], delta=delta[:steps], zeta=zeta[:steps],
        risk=risk_arr[:steps], fallback=fallback[:steps], h=h[:steps], h_D=h_D[:steps],
        D=D[:steps], statuses=statuses, kkt_residual=kkt[:steps],
        decisions=decisions_log, converged=converged, deadlock=deadlock, steps=steps)
