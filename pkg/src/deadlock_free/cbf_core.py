"""Task CLF, pairwise safety CBF, risk measure and deadlock indicator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .linalg_so import o_d, omega_dim, orthonormality_error


@dataclass(frozen=True)
class ClassK:
    """Extended class-K function; only the linear kind k*s ships."""
    gain: float = 1.0
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ValueError(f"unsupported class-K kind {self.kind!r}")
        if not self.gain > 0:
            raise ValueError("class-K gain must be positive")

    def __call__(self, s):
        return self.gain * s


@dataclass(frozen=True)
class ControllerParams:
    # tuned on the 4-agent ring; see README "Parameters"
    gamma: ClassK = field(default_factory=lambda: ClassK(1.0))
    alpha: ClassK = field(default_factory=lambda: ClassK(3.4))
    beta: ClassK = field(default_factory=lambda: ClassK(9.0))
    p: float = 10.0
    q: float = 150.0
    weight: float = 0.5       # W_i against another moving agent
    phi: float = 5.0
    c: float = 0.0
    t: float = 1.0
    epsilon: float = 0.1
    psi_scale: float = 0.65
    omega_c: float = 0.05
    dt: float = 0.02
    zeta_floor: float = 1e-9
    psi_floor: float = 1e-9
    reset_window: int = 50
    reset_rule: str = "idle"
    reset_ratio: float = 0.01
    h_tol: float = 0.5
    v_tol: float = 1e-3
    check_kkt: bool = True

    def __post_init__(self):
        for name in ("p", "q", "phi", "t", "epsilon", "psi_scale", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.weight < 1.0:
            raise ValueError("weight must lie in (0, 1)")
        if self.reset_rule not in ("zeta", "idle"):
            raise ValueError("reset_rule must be 'zeta' or 'idle'")
        if self.reset_window < 1:
            raise ValueError("reset_window must be >= 1")


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    goal: np.ndarray
    radius: float = 1.0
    Q: np.ndarray | None = None
    last_u: np.ndarray | None = None
    last_omega: np.ndarray | None = None
    static: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).copy()
        d = x.shape[0]
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float).copy())
        Q = np.eye(d) if self.Q is None else np.asarray(self.Q, dtype=float).copy()
        object.__setattr__(self, "Q", Q)
        u = np.zeros(d) if self.last_u is None else np.asarray(self.last_u, dtype=float).copy()
        object.__setattr__(self, "last_u", u)
        w = (np.zeros(omega_dim(d)) if self.last_omega is None
             else np.atleast_1d(np.asarray(self.last_omega, dtype=float)).copy())
        object.__setattr__(self, "last_omega", w)
        if self.goal.shape != x.shape:
            raise ValueError("goal and position dimensions differ")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if orthonormality_error(Q) > 1e-9:
            raise ValueError("Q must be a rotation matrix")
        for arr in (x, self.goal, Q, u, w):
            arr.setflags(write=False)

    @property
    def d(self) -> int:
        return self.x.shape[0]

    def evolve(self, **changes) -> "AgentState":
        return replace(self, **changes)


class SingleIntegrator:
    """x' = u: f = 0, g = I."""

    def __init__(self, d: int = 2):
        self.d = d
        self.m = d
        self._eye = np.eye(d)
        self._zero = np.zeros(d)

    def f(self, x):
        return self._zero

    def g(self, x):
        return self._eye

    def df(self, x):
        return np.zeros((self.d, self.d))

    def dg(self, x):
        # None marks a state-independent input matrix
        return None

    def velocity(self, x, u):
        return np.asarray(u, dtype=float)


class ControlAffine:
    """x' = f(x) + g(x) u from user callables.

    ``df`` returns the Jacobian of f; ``dg`` returns the list of Jacobians of
    the columns of g (or None when g is constant).
    """

    def __init__(self, f, g, df, dg, d: int, m: int):
        self.f, self.g, self.df, self.dg = f, g, df, dg
        self.d, self.m = d, m

    def velocity(self, x, u):
        return self.f(x) + self.g(x) @ u


SINGLE_INTEGRATOR_2D = SingleIntegrator(2)


class GoalCLF:
    """V(y) = ||y - goal||^2 evaluated at an arbitrary point y."""

    def __init__(self, goal):
        self.goal = np.asarray(goal, dtype=float)

    def value(self, y) -> float:
        e = np.asarray(y, dtype=float) - self.goal
        return float(e @ e)

    def grad(self, y) -> np.ndarray:
        return 2.0 * (np.asarray(y, dtype=float) - self.goal)

    def hess(self, y) -> np.ndarray:
        return 2.0 * np.eye(self.goal.shape[0])


def clf_of(a: AgentState) -> GoalCLF:
    return GoalCLF(a.goal)


def clf_value(a: AgentState) -> float:
    return clf_of(a).value(a.x)


def clf_grad(a: AgentState) -> np.ndarray:
    return clf_of(a).grad(a.x)


def clf_q_value(a: AgentState) -> float:
    """V evaluated at the virtually rotated state Q x."""
    return clf_of(a).value(a.Q @ a.x)


def clf_q_grad(a: AgentState) -> np.ndarray:
    """Gradient of V(Q x) in x: Q^T grad V(Q x)."""
    return a.Q.T @ clf_of(a).grad(a.Q @ a.x)


def clf_q_hess(a: AgentState) -> np.ndarray:
    V = clf_of(a)
    return a.Q.T @ V.hess(a.Q @ a.x) @ a.Q


def clf_q_derivative_terms(a: AgentState) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of x' and omega in d/dt V(Q x) under Q' = Q hat(omega)."""
    cx = clf_q_grad(a)
    return cx, o_d(a.x).T @ cx


def h_pair(ai: AgentState, aj: AgentState) -> float:
    e = ai.x - aj.x
    return float(e @ e - (ai.radius + aj.radius) ** 2)


def h_pair_grad(ai: AgentState, aj: AgentState) -> np.ndarray:
    """Gradient of h_ij with respect to x_i."""
    return 2.0 * (ai.x - aj.x)


def h_pair_lie(ai: AgentState, aj: AgentState, dyn=SINGLE_INTEGRATOR_2D):
    grad = h_pair_grad(ai, aj)
    return float(grad @ dyn.f(ai.x)), grad @ dyn.g(ai.x)


def pair_weight(ai: AgentState, aj: AgentState, params: ControllerParams) -> float:
    """Share of the pairwise safety constraint carried by agent i."""
    if aj.static:
        return 1.0
    if ai.static:
        return 0.0
    return params.weight


def h_pair_rate(ai: AgentState, aj: AgentState, dyn=SINGLE_INTEGRATOR_2D) -> float:
    """dh_ij/dt using both agents' last executed controls."""
    vi = dyn.velocity(ai.x, ai.last_u)
    vj = dyn.velocity(aj.x, aj.last_u)
    return float(2.0 * (ai.x - aj.x) @ (vi - vj))


def risk(i: int, agents: Sequence[AgentState], params: ControllerParams,
         dyn=SINGLE_INTEGRATOR_2D) -> float:
    """Mean CBF decay margin over neighbours, offset by phi.

    A lone agent has no neighbours; its risk is defined as phi.
    """
    n = len(agents)
    if n < 2:
        return params.phi
    ai = agents[i]
    acc = 0.0
    for j, aj in enumerate(agents):
        if j == i:
            continue
        acc += -h_pair_rate(ai, aj, dyn) - params.alpha(h_pair(ai, aj))
    return acc / (n - 1) + params.phi


def indicator(R: float, params: ControllerParams) -> float:
    """Sigmoid 1 / (1 + exp(-t (R - c))), evaluated without overflow."""
    s = params.t * (R - params.c)
    if s >= 0:
        return 1.0 / (1.0 + math.exp(-s))
    e = math.exp(s)
    return e / (1.0 + e)
