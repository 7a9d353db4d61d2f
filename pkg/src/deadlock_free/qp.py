"""Dense strictly convex QP:  min 1/2 z'Hz + f'z  s.t.  A z <= b.

``solve`` is a primal active-set method (Nocedal & Wright, Alg. 16.3) with a
regularised phase-1 problem to find a feasible start.  ``oracle_solve``
enumerates candidate active sets and is only meant for tests.
"""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
STAT_TOL = 1e-7
COMP_TOL = 1e-7
REG_EPS = 1e-10


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    A: np.ndarray
    b: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        self.f = np.asarray(self.f, dtype=float).reshape(n)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.H.shape != (n, n):
            raise ValueError("H must be square")
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b disagree on the number of constraints")
        if not np.allclose(self.H, self.H.T, atol=1e-12):
            raise ValueError("H must be symmetric")
        if not self.labels:
            self.labels = [f"row{i}" for i in range(self.k)]
        elif len(self.labels) != self.k:
            raise ValueError("one label per constraint row")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    multipliers: np.ndarray
    active_set: tuple
    status: QpStatus
    kkt_residual: float = np.inf
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def kkt_residuals(p: QpProblem, z, lam) -> tuple[float, float, float]:
    """Stationarity, primal infeasibility and complementarity residuals."""
    z = np.asarray(z, dtype=float)
    lam = np.asarray(lam, dtype=float)
    stat = float(np.linalg.norm(p.H @ z + p.f + p.A.T @ lam)) if p.n else 0.0
    if p.k == 0:
        return stat, 0.0, 0.0
    slack = p.A @ z - p.b
    return stat, float(max(slack.max(), 0.0)), float(np.abs(lam * slack).max())


def check_kkt(p: QpProblem, sol: QpSolution) -> None:
    """Raise AssertionError if an Optimal solution breaks the KKT tolerances."""
    if not sol.ok:
        return
    stat, feas, comp = kkt_residuals(p, sol.z, sol.multipliers)
    if stat > STAT_TOL or feas > FEAS_TOL or comp > COMP_TOL:
        raise AssertionError(
            f"KKT violated: stationarity={stat:.2e} feasibility={feas:.2e} "
            f"complementarity={comp:.2e}")
    if p.k and sol.multipliers.min() < -1e-9:
        raise AssertionError(f"negative multiplier {sol.multipliers.min():.2e}")


def _regularize(H: np.ndarray) -> np.ndarray:
    if np.linalg.eigvalsh(H).min() <= 0.0:
        return H + REG_EPS * np.eye(H.shape[0])
    return H


def _eqp(H, g, Aw):
    """Step and multipliers of  min 1/2 p'Hp + g'p  s.t.  Aw p = 0."""
    n = H.shape[0]
    m = Aw.shape[0]
    if m == 0:
        return np.linalg.solve(H, -g), np.zeros(0)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    rhs = np.concatenate([-g, np.zeros(m)])
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]


def _active_set_core(H, f, A, b, z, working, max_iter):
    """Primal active-set iterations from a feasible z.

    Returns (z, lam_full, working, status, iterations).
    """
    n = H.shape[0]
    k = A.shape[0]
    working = list(working)
    for it in range(1, max_iter + 1):
        g = H @ z + f
        Aw = A[working] if working else np.zeros((0, n))
        try:
            step, lam_w = _eqp(H, g, Aw)
        except np.linalg.LinAlgError:
            # dependent rows in the working set: drop the newest one
            working.pop()
            continue
        if len(working) >= n:
            # n independent active rows pin z; any step is round-off
            step = np.zeros(n)
        scale = 1.0 + np.linalg.norm(z)
        if np.linalg.norm(step) <= 1e-10 * scale:
            lam = np.zeros(k)
            lam[working] = lam_w
            if not working or lam_w.min() >= -1e-12:
                return z, np.maximum(lam, 0.0), working, QpStatus.OPTIMAL, it
            # most negative multiplier leaves; ties go to the lowest index
            worst = min(range(len(working)), key=lambda t: (lam_w[t], working[t]))
            working.pop(worst)
            continue
        alpha, blocking = 1.0, None
        Ap = A @ step if k else np.zeros(0)
        slack = b - A @ z if k else np.zeros(0)
        in_w = set(working)
        for i in range(k):
            if i in in_w or Ap[i] <= 1e-14 * (1.0 + np.abs(A[i]).sum()):
                continue
            t = max(slack[i], 0.0) / Ap[i]
            if t < alpha:
                alpha, blocking = t, i
        z = z + alpha * step
        if blocking is not None:
            working.append(blocking)
            working.sort()
    return z, np.zeros(k), working, QpStatus.MAX_ITER, max_iter


def _refine(p, H, z, lam, working, sweeps=3):
    """Polish an optimal iterate on its active set.

    Large multipliers amplify round-off in the active rows, so the active
    rows are driven back to equality: by a square solve at a vertex,
    otherwise by a few Newton corrections on the KKT system.  An iterate is
    kept only if it lowers the worst KKT residual.
    """
    if not working:
        return z, lam
    n = p.n
    W = list(working)
    Aw = p.A[W]

    def worst(zz, ll):
        if ll.min() < 0.0:
            return np.inf
        return max(kkt_residuals(p, zz, ll))

    best = (worst(z, lam), z, lam)
    if len(W) == n:
        try:
            z2 = np.linalg.solve(Aw, p.b[W])
            lam2 = np.zeros_like(lam)
            lam2[W] = np.linalg.solve(Aw.T, -(H @ z2 + p.f))
        except np.linalg.LinAlgError:
            return z, lam
        cand = worst(z2, lam2)
        return (z2, lam2) if cand < best[0] else (z, lam)
    m = len(W)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    for _ in range(sweeps):
        rhs = np.concatenate([-(H @ z + p.f + p.A.T @ lam), p.b[W] - Aw @ z])
        try:
            d = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            break
        z = z + d[:n]
        lam = lam.copy()
        lam[W] += d[n:]
        cand = worst(z, lam)
        if cand < best[0]:
            best = (cand, z, lam)
    return best[1], best[2]


def _finish(p, H, z, lam, working, status, iters) -> QpSolution:
    if status is QpStatus.OPTIMAL:
        z, lam = _refine(p, H, z, lam, working)
        stat, feas, comp = kkt_residuals(p, z, lam)
        res = max(stat, feas, comp)
    else:
        res = np.inf
    return QpSolution(z=z, multipliers=lam, active_set=tuple(working),
                      status=status, kkt_residual=res, iterations=iters)


def _phase1(A, b, max_iter):
    """Find z with A z <= b or report infeasibility.

    Solves  min s + rho/2 (|z|^2 + s^2)  s.t.  A z - s <= b, -s <= 0  from
    the trivially feasible point z = 0, s = max(0, -min b) + 1.
    """
    k, n = A.shape
    rho = 1e-8
    Hs = rho * np.eye(n + 1)
    fs = np.zeros(n + 1)
    fs[-1] = 1.0
    As = np.zeros((k + 1, n + 1))
    As[:k, :n] = A
    As[:k, n] = -1.0
    As[k, n] = -1.0
    bs = np.concatenate([b, [0.0]])
    z0 = np.zeros(n + 1)
    z0[-1] = max(0.0, float(-b.min())) + 1.0
    zs, _, _, status, _ = _active_set_core(Hs, fs, As, bs, z0, [], max_iter)
    z = zs[:n]
    if status is not QpStatus.OPTIMAL:
        return None, status
    if (A @ z - b).max() > FEAS_TOL:
        return None, QpStatus.INFEASIBLE
    return z, QpStatus.OPTIMAL


def solve(p: QpProblem, warm_start=None, max_iter: int | None = None) -> QpSolution:
    """Solve the QP; ``warm_start`` is an optional guess of the active set."""
    H = _regularize(p.H)
    n, k = p.n, p.k
    if max_iter is None:
        max_iter = max(100 * k, 50)
    if k == 0:
        z = np.linalg.solve(H, -p.f)
        return _finish(p, H, z, np.zeros(0), [], QpStatus.OPTIMAL, 1)

    start, working = None, []
    if warm_start:
        ws = sorted(i for i in set(warm_start) if 0 <= i < k)
        try:
            z_ws = _eqp_affine(H, p.f, p.A[ws], p.b[ws])
        except np.linalg.LinAlgError:
            z_ws = None
        if z_ws is not None and (p.A @ z_ws - p.b).max() <= FEAS_TOL:
            start, working = z_ws, ws
    if start is None:
        z0 = np.zeros(n)
        if (p.A @ z0 - p.b).max() <= 0.0:
            start = z0
        else:
            start, status = _phase1(p.A, p.b, max_iter)
            if start is None:
                if status is QpStatus.MAX_ITER:
                    log.warning("phase-1 iteration cap hit; treating as infeasible")
                return QpSolution(z=np.full(n, np.nan), multipliers=np.zeros(k),
                                  active_set=(), status=status)

    z, lam, working, status, iters = _active_set_core(
        H, p.f, p.A, p.b, start, working, max_iter)
    if status is QpStatus.MAX_ITER:
        log.warning("active-set iteration cap (%d) hit", max_iter)
    return _finish(p, H, z, lam, working, status, iters)


def _eqp_affine(H, f, Aw, bw):
    """Minimiser of 1/2 z'Hz + f'z subject to Aw z = bw."""
    n = H.shape[0]
    m = Aw.shape[0]
    if m == 0:
        return np.linalg.solve(H, -f)
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = Aw.T
    K[n:, :n] = Aw
    sol = np.linalg.solve(K, np.concatenate([-f, bw]))
    return sol[:n]


def oracle_solve(p: QpProblem, max_active: int | None = None) -> QpSolution:
    """Exhaustive search over candidate active sets (test oracle).

    Every subset W of at most ``max_active`` rows (default: min(n, k)) is
    tried by solving the equality-constrained KKT system; the first subset
    whose point is primal feasible with nonnegative multipliers is optimal.
    Subsets of equal size are solved as one batched linear system.
    """
    H = _regularize(p.H)
    n, k = p.n, p.k
    if k == 0:
        z = np.linalg.solve(H, -p.f)
        return _finish(p, H, z, np.zeros(0), [], QpStatus.OPTIMAL, 1)
    if max_active is None:
        max_active = min(n, k)
    best = None
    for size in range(0, max_active + 1):
        subsets = np.array(list(itertools.combinations(range(k), size)), dtype=int)
        if subsets.size == 0:
            subsets = subsets.reshape(1, 0)
        m = size
        K = np.zeros((len(subsets), n + m, n + m))
        K[:, :n, :n] = H
        rhs = np.zeros((len(subsets), n + m))
        rhs[:, :n] = -p.f
        if m:
            Aw = p.A[subsets]                 # (S, m, n)
            K[:, :n, n:] = np.transpose(Aw, (0, 2, 1))
            K[:, n:, :n] = Aw
            rhs[:, n:] = p.b[subsets]
        with np.errstate(all="ignore"):
            try:
                sols = np.linalg.solve(K, rhs[..., None])[..., 0]
                good = np.ones(len(subsets), dtype=bool)
            except np.linalg.LinAlgError:
                sols = np.full((len(subsets), n + m), np.nan)
                good = np.zeros(len(subsets), dtype=bool)
                for s in range(len(subsets)):
                    try:
                        sols[s] = np.linalg.solve(K[s], rhs[s])
                        good[s] = True
                    except np.linalg.LinAlgError:
                        pass
        z = sols[:, :n]
        lam = sols[:, n:]
        feas = ((z @ p.A.T - p.b) <= 1e-9 * (1.0 + np.abs(p.b).max())).all(axis=1)
        dual = (lam >= -1e-9).all(axis=1) if m else np.ones(len(subsets), dtype=bool)
        ok = good & feas & dual & np.isfinite(sols).all(axis=1)
        if ok.any():
            idx = int(np.flatnonzero(ok)[0])
            lam_full = np.zeros(k)
            lam_full[subsets[idx]] = np.maximum(lam[idx], 0.0)
            best = (z[idx], lam_full, list(subsets[idx]))
            break
    if best is None:
        return QpSolution(z=np.full(n, np.nan), multipliers=np.zeros(k),
                          active_set=(), status=QpStatus.INFEASIBLE)
    z, lam, working = best
    return _finish(p, H, z, lam, working, QpStatus.OPTIMAL, 1)
