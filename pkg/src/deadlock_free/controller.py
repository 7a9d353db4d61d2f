"""Per-agent QP assembly and solution for the three controller modes.

Decision vector z = (u, omega, delta); Baseline drops omega.  Rows follow
the ``A z <= b`` convention of :mod:`deadlock_free.qp`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qp
from .cbf_core import (SINGLE_INTEGRATOR_2D, AgentState, ControllerParams,
                       clf_grad, clf_q_derivative_terms, clf_q_value, clf_value,
                       h_pair, h_pair_grad, indicator, pair_weight, risk)
from .deadlock_geom import aux_cbf
from .linalg_so import omega_dim


class ControllerMode(enum.Enum):
    BASELINE = "baseline"
    ALWAYS_ON = "always_on"
    ADAPTIVE = "adaptive"

    @classmethod
    def parse(cls, value) -> "ControllerMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"alwayson": "always_on", "always": "always_on"}
        return cls(aliases.get(key, key))


@dataclass
class AssembledQp:
    problem: qp.QpProblem
    zeta: float
    risk: float
    h: dict
    geometry: dict = field(default_factory=dict)
    degenerate_pairs: tuple = ()


@dataclass
class ControlDecision:
    u: np.ndarray
    omega: np.ndarray
    delta: float
    zeta: float
    risk: float
    qp_status: qp.QpStatus | None
    active_set: tuple
    fallback_used: bool
    h: dict
    h_D: dict
    D: dict
    active_labels: tuple = ()
    kkt_residual: float = float("nan")

    @property
    def deadlock_engaged(self) -> bool:
        """True when any deadlock row binds or the fallback fired."""
        return self.fallback_used or any(lbl[0] == "deadlock" for lbl in self.active_labels)


def _neighbours(i: int, snapshot: Sequence[AgentState]):
    return [(j, aj) for j, aj in enumerate(snapshot) if j != i]


def assemble_qp(i: int, snapshot: Sequence[AgentState], mode, params: ControllerParams,
                dyn=SINGLE_INTEGRATOR_2D, zeta_override: float | None = None) -> AssembledQp:
    """Build the QP for agent i from an immutable snapshot of every agent."""
    mode = ControllerMode.parse(mode)
    ai = snapshot[i]
    x = ai.x
    f = dyn.f(x)
    g = dyn.g(x)
    m = g.shape[1]
    r = omega_dim(ai.d)

    R = risk(i, snapshot, params, dyn)
    if zeta_override is not None:
        zeta = float(zeta_override)
    elif mode is ControllerMode.ALWAYS_ON:
        zeta = 1.0
    else:
        # informational only in Baseline, whose CLF row ignores it
        zeta = indicator(R, params)

    with_omega = mode is not ControllerMode.BASELINE
    n = m + (r if with_omega else 0) + 1
    iu = slice(0, m)
    iw = slice(m, m + r)
    idelta = n - 1

    H = np.zeros((n, n))
    H[iu, iu] = 2.0 * np.eye(m)
    if with_omega:
        H[iw, iw] = 2.0 * params.q * np.eye(r)
    H[idelta, idelta] = 2.0 * params.p

    rows, rhs, labels = [], [], []

    # CLF row
    gV = clf_grad(ai)
    V = clf_value(ai)
    row = np.zeros(n)
    if not with_omega:
        row[iu] = gV @ g
        bound = -(gV @ f + params.gamma(V))
    else:
        cx, cw = clf_q_derivative_terms(ai)
        Vq = clf_q_value(ai)
        one_minus = 1.0 - zeta
        row[iu] = one_minus * (gV @ g) + zeta * (cx @ g)
        row[iw] = zeta * cw
        bound = -(one_minus * (gV @ f + params.gamma(V))
                  + zeta * (cx @ f + params.gamma(Vq)))
    row[idelta] = -1.0
    rows.append(row)
    rhs.append(bound)
    labels.append(("clf", i))

    hs = {}
    for j, aj in _neighbours(i, snapshot):
        h = h_pair(ai, aj)
        hs[j] = h
        gh = h_pair_grad(ai, aj)
        row = np.zeros(n)
        row[iu] = -(gh @ g)
        rows.append(row)
        rhs.append(gh @ f + pair_weight(ai, aj, params) * params.alpha(h))
        labels.append(("safety", j))

    geometry = {}
    degenerate = []
    if with_omega and zeta >= params.zeta_floor:
        for j, aj in _neighbours(i, snapshot):
            geo = aux_cbf(ai, aj, params, dyn)
            geometry[j] = geo
            if geo.psi < params.psi_floor:
                # out of interaction range: zeta * psi * (...) >= 0 is vacuous
                continue
            if geo.degenerate:
                degenerate.append(j)
            row = np.zeros(n)
            row[iu] = -zeta * (geo.grad_x_hD @ g)
            row[iw] = -zeta * geo.grad_Q_hD
            bound = zeta * (geo.grad_x_hD @ f + params.beta(geo.h_D))
            # positive rescaling leaves the half-space unchanged but keeps
            # multipliers O(1) when zeta * psi is small
            scale = np.abs(row).max()
            if scale > 0.0:
                row /= scale
                bound /= scale
            rows.append(row)
            rhs.append(bound)
            labels.append(("deadlock", j))

    A = np.array(rows)
    b = np.array(rhs, dtype=float)
    return AssembledQp(problem=qp.QpProblem(H, np.zeros(n), A, b, labels),
                       zeta=zeta, risk=R, h=hs, geometry=geometry,
                       degenerate_pairs=tuple(degenerate))


def fallback_decision(ai: AgentState, params: ControllerParams, asm: AssembledQp,
                      m: int, status) -> ControlDecision:
    r = omega_dim(ai.d)
    return ControlDecision(
        u=np.zeros(m), omega=np.full(r, params.omega_c), delta=0.0,
        zeta=asm.zeta, risk=asm.risk, qp_status=status, active_set=(),
        fallback_used=True, h=asm.h,
        h_D={j: geo.h_D for j, geo in asm.geometry.items()},
        D={j: geo.D for j, geo in asm.geometry.items()})


def decide(i: int, snapshot: Sequence[AgentState], mode, params: ControllerParams,
           warm_start=None, dyn=SINGLE_INTEGRATOR_2D,
           zeta_override: float | None = None) -> ControlDecision:
    """Solve agent i's QP; infeasible or degenerate problems fall back to
    u = 0, omega = omega_c."""
    mode = ControllerMode.parse(mode)
    ai = snapshot[i]
    asm = assemble_qp(i, snapshot, mode, params, dyn, zeta_override)
    m = dyn.g(ai.x).shape[1]
    r = omega_dim(ai.d)
    prob = asm.problem
    if asm.degenerate_pairs:
        return fallback_decision(ai, params, asm, m, None)
    if warm_start:
        index = {lbl: k for k, lbl in enumerate(prob.labels)}
        warm_start = [index[w] if isinstance(w, tuple) else w for w in warm_start
                      if not isinstance(w, tuple) or w in index]
    sol = qp.solve(prob, warm_start=warm_start)
    if not sol.ok:
        return fallback_decision(ai, params, asm, m, sol.status)
    if params.check_kkt:
        qp.check_kkt(prob, sol)
    z = sol.z
    omega = z[m:m + r] if mode is not ControllerMode.BASELINE else np.zeros(r)
    return ControlDecision(
        u=z[:m].copy(), omega=np.array(omega, dtype=float), delta=float(z[-1]),
        zeta=asm.zeta, risk=asm.risk, qp_status=sol.status,
        active_set=sol.active_set, fallback_used=False, h=asm.h,
        h_D={j: geo.h_D for j, geo in asm.geometry.items()},
        D={j: geo.D for j, geo in asm.geometry.items()},
        active_labels=tuple(prob.labels[k] for k in sol.active_set),
        kkt_residual=sol.kkt_residual)
