"""Collinearity measure, auxiliary deadlock barrier and equilibrium diagnostics.

All gradients are with respect to the state of agent i only (x_i and the
rotation Q_i); agent j enters as a frozen neighbour.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cbf_core import (SINGLE_INTEGRATOR_2D, AgentState, ControllerParams,
                       clf_grad, clf_q_grad, clf_q_hess, clf_value, h_pair,
                       h_pair_grad, pair_weight)
from .linalg_so import gamma_op, o_d, projection

DELTA_TOL = 1e-12


@dataclass(frozen=True)
class DeadlockGeometry:
    h: float
    D: float
    h_D: float
    grad_D: np.ndarray
    grad_Q_D: np.ndarray
    grad_x_hD: np.ndarray
    grad_Q_hD: np.ndarray
    psi: float
    psi_prime: float
    degenerate: bool


@dataclass(frozen=True)
class EquilibriumDiagnostics:
    F_V: float
    F_h: float
    Delta: float
    lambda1: float
    lambda2: float
    lambda_defined: bool
    grad_h_zero: bool
    in_Omega_clf_only: bool
    in_Omega_clf_cbf: bool
    interior_equilibrium: bool
    near_boundary_equilibrium: bool
    speed: float
    h: float


def psi_fn(h: float, params: ControllerParams) -> tuple[float, float]:
    """Gaussian interaction weight exp(-(h/s)^2) and its derivative.

    Negative h is clamped to zero, where the derivative vanishes.
    """
    s = params.psi_scale
    hc = max(h, 0.0)
    psi = math.exp(-(hc / s) ** 2)
    return psi, -2.0 * hc / (s * s) * psi


def _wedge_sq(u: np.ndarray, v: np.ndarray) -> float:
    """|u|^2 |v|^2 - (u.v)^2 as a sum of squares (Lagrange's identity).

    Equals u' P_v u without the cancellation of the direct form.
    """
    M = np.outer(u, v)
    W = M - M.T
    return float(0.5 * np.sum(W * W))


def _rotated_clf(ai: AgentState):
    return clf_q_grad(ai), clf_q_hess(ai)


def collinearity(ai: AgentState, aj: AgentState, dyn=SINGLE_INTEGRATOR_2D) -> float:
    """1/2 a' G (P_f + P_{G b}) G a with a = grad V_q and b = grad_i h_ij."""
    a = clf_q_grad(ai)
    b = h_pair_grad(ai, aj)
    f = dyn.f(ai.x)
    g = dyn.g(ai.x)
    G = g @ g.T
    w = G @ a
    return 0.5 * (_wedge_sq(w, f) + _wedge_sq(w, G @ b))


def collinearity_grads(ai: AgentState, aj: AgentState, dyn=SINGLE_INTEGRATOR_2D):
    """Return (D, grad_x D, grad_Q D, sin2) for the pair.

    ``sin2`` is D normalised by its largest possible value for the current
    vector lengths; it is ~0 exactly when the vectors are collinear.
    """
    x = ai.x
    a, Ha = _rotated_clf(ai)
    b = h_pair_grad(ai, aj)
    Hh = 2.0 * np.eye(ai.d)
    f = dyn.f(x)
    g = dyn.g(x)
    Jf = dyn.df(x)
    Jg = dyn.dg(x)
    G = g @ g.T
    w = G @ a
    c = G @ b
    Pf = projection(f)
    Pc = projection(c)
    Pw = projection(w)
    P = Pf + Pc
    Pw_vec = P @ w
    D = 0.5 * (_wedge_sq(w, f) + _wedge_sq(w, c))
    grad_D = ((Ha @ G + gamma_op(g, Jg, a).T) @ Pw_vec
              + (Hh @ G + gamma_op(g, Jg, b).T) @ (Pw @ c)
              + Jf.T @ (Pw @ f))
    grad_Q_D = (Ha @ o_d(x) - o_d(a)).T @ G @ Pw_vec
    ww = w @ w
    scale = 0.5 * ww * (c @ c + f @ f)
    sin2 = D / scale if scale > 0 else 0.0
    return D, grad_D, grad_Q_D, sin2


def aux_cbf(ai: AgentState, aj: AgentState, params: ControllerParams,
            dyn=SINGLE_INTEGRATOR_2D, degenerate_tol: float = 1e-12) -> DeadlockGeometry:
    """psi(h_ij) (D_ij - eps) and its gradients in x_i and in the rotation."""
    h = h_pair(ai, aj)
    D, grad_D, grad_Q_D, sin2 = collinearity_grads(ai, aj, dyn)
    psi, dpsi = psi_fn(h, params)
    gap = D - params.epsilon
    grad_x = psi * grad_D + dpsi * gap * h_pair_grad(ai, aj)
    grad_Q = psi * grad_Q_D
    return DeadlockGeometry(
        h=h, D=D, h_D=psi * gap, grad_D=grad_D, grad_Q_D=grad_Q_D,
        grad_x_hD=grad_x, grad_Q_hD=grad_Q, psi=psi, psi_prime=dpsi,
        degenerate=sin2 <= degenerate_tol)


def equilibrium_diagnostics(ai: AgentState, aj: AgentState, params: ControllerParams,
                            u=None, dyn=SINGLE_INTEGRATOR_2D,
                            tol: float = 1e-12) -> EquilibriumDiagnostics:
    """Closed-loop equilibrium classification of the plain CLF-CBF QP.

    Uses the task CLF (no rotation) and the weighted barrier rate
    W_i alpha(h) that the QP enforces.  ``u`` is the applied control.
    """
    x = ai.x
    f = dyn.f(x)
    g = dyn.g(x)
    G = g @ g.T
    gV = clf_grad(ai)
    gh = h_pair_grad(ai, aj)
    h = h_pair(ai, aj)
    V = clf_value(ai)
    LgV = gV @ g
    Lgh = gh @ g
    F_V = float(gV @ f + params.gamma(V))
    F_h = float(gh @ f + pair_weight(ai, aj, params) * params.alpha(h))
    inv_p = 1.0 / params.p
    cross = float(gV @ G @ gh)
    nV = inv_p + float(LgV @ LgV)
    nh = float(Lgh @ Lgh)
    Delta = cross**2 - nV * nh

    grad_h_zero = bool(np.linalg.norm(gh) <= tol)
    if grad_h_zero:
        lam1, lam2, defined = F_V / nV, 0.0, True
    elif abs(Delta) <= DELTA_TOL:
        lam1, lam2, defined = math.nan, math.nan, False
    else:
        lam1 = (F_h * cross - F_V * nh) / Delta
        lam2 = (F_h * nV - F_V * cross) / Delta
        defined = True

    clf_only = bool(cross / nV * F_V < F_h + tol and F_V >= -tol)
    both = bool(defined and lam1 >= -tol and lam2 >= -tol)
    if u is None:
        u = np.zeros(g.shape[1])
    speed = float(np.linalg.norm(f + g @ np.asarray(u, dtype=float)))
    interior = bool(clf_only and h > 0 and
                    np.linalg.norm(f - params.p * params.gamma(V) * (G @ gV)) <= 1e-9)
    near = bool(both and abs(h) <= params.h_tol and speed <= params.v_tol)
    return EquilibriumDiagnostics(
        F_V=F_V, F_h=F_h, Delta=Delta, lambda1=lam1, lambda2=lam2,
        lambda_defined=defined, grad_h_zero=grad_h_zero,
        in_Omega_clf_only=clf_only, in_Omega_clf_cbf=both,
        interior_equilibrium=interior, near_boundary_equilibrium=near,
        speed=speed, h=h)
