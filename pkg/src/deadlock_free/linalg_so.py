"""Small dense operators on R^d and SO(d) used by the rotated CLF.

Only d in {2, 3} has hat/vee tables; everything else is written for
general d where it costs nothing.
"""
from __future__ import annotations

import numpy as np

ORTHO_TOL = 1e-9


def omega_dim(d: int) -> int:
    return d * (d - 1) // 2


def _as_omega(omega, d: int) -> np.ndarray:
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if w.shape != (omega_dim(d),):
        raise ValueError(f"omega must have length {omega_dim(d)} for d={d}, got {w.shape}")
    return w


def hat(omega, d: int | None = None) -> np.ndarray:
    """Skew-symmetric matrix of a rotation-rate vector.

    For d=2 the rate is a scalar and hat(w) = [[0, -w], [w, 0]]; for d=3
    it is the cross-product matrix.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if d is None:
        d = {1: 2, 3: 3}.get(w.size)
        if d is None:
            raise ValueError(f"cannot infer dimension from omega of length {w.size}")
    w = _as_omega(w, d)
    if d == 2:
        return np.array([[0.0, -w[0]], [w[0], 0.0]])
    if d == 3:
        return np.array([
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ])
    raise ValueError(f"hat is only tabulated for d in (2, 3), got d={d}")


def vee(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    d = W.shape[0]
    if W.shape != (d, d):
        raise ValueError("vee expects a square matrix")
    if d == 2:
        return np.array([W[1, 0]])
    if d == 3:
        return np.array([W[2, 1], W[0, 2], W[1, 0]])
    raise ValueError(f"vee is only tabulated for d in (2, 3), got d={d}")


def o_d(x) -> np.ndarray:
    """Matrix O(x) with hat(w) @ x == O(x) @ w for every w.

    Shape is (d, d(d-1)/2).
    """
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    if d == 2:
        return np.array([[-x[1]], [x[0]]])
    if d == 3:
        # hat(w) x = w cross x = -x cross w
        return -hat(x, 3)
    raise ValueError(f"o_d is only tabulated for d in (2, 3), got d={d}")


def rotation_2d(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def angle_2d(Q: np.ndarray) -> float:
    return float(np.arctan2(Q[1, 0], Q[0, 0]))


def orthonormality_error(Q: np.ndarray) -> float:
    Q = np.asarray(Q, dtype=float)
    return float(np.linalg.norm(Q.T @ Q - np.eye(Q.shape[0])))


def polar_project(M: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix to M in the Frobenius norm."""
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1.0
        R = U @ Vt
    return R


def expm_skew(omega, d: int) -> np.ndarray:
    w = _as_omega(omega, d)
    if d == 2:
        return rotation_2d(w[0])
    if d == 3:
        theta = float(np.linalg.norm(w))
        K = hat(w, 3)
        if theta < 1e-12:
            return np.eye(3) + K + 0.5 * K @ K
        return (np.eye(3) + np.sin(theta) / theta * K
                + (1.0 - np.cos(theta)) / theta**2 * K @ K)
    raise ValueError(f"expm_skew is only tabulated for d in (2, 3), got d={d}")


def integrate_rotation(Q, omega, dt: float) -> np.ndarray:
    """Advance Q' = Q hat(omega) exactly over one step of length dt."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[0]
    err = orthonormality_error(Q)
    if err > ORTHO_TOL:
        raise ValueError(f"Q is not orthonormal (||Q^T Q - I|| = {err:.3e})")
    w = _as_omega(omega, d)
    if d == 2:
        # compose angles so the result is an exact rotation matrix
        return rotation_2d(angle_2d(Q) + dt * w[0])
    return polar_project(Q @ expm_skew(dt * w, d))


def projection(v) -> np.ndarray:
    """Scaled orthogonal projector ||v||^2 I - v v^T."""
    v = np.asarray(v, dtype=float)
    return (v @ v) * np.eye(v.shape[0]) - np.outer(v, v)


def gamma_op(a_cols, a_jacs, b) -> np.ndarray:
    """Sum_i (a_i^T b I + a_i b^T) J_i for columns a_i with Jacobians J_i.

    ``a_cols`` is the d x m matrix [a_1 ... a_m]; ``a_jacs`` is a sequence of
    m Jacobians (each d x d) or None when a is state independent.
    """
    A = np.asarray(a_cols, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b.shape[0]
    if A.ndim != 2 or A.shape[0] != d:
        raise ValueError(f"a_cols must be {d} x m, got {A.shape}")
    out = np.zeros((d, d))
    if a_jacs is None:
        return out
    if len(a_jacs) != A.shape[1]:
        raise ValueError("need one Jacobian per column of a")
    eye = np.eye(d)
    for i, J in enumerate(a_jacs):
        J = np.asarray(J, dtype=float)
        if J.shape != (d, d):
            raise ValueError(f"Jacobian {i} must be {d} x {d}, got {J.shape}")
        ai = A[:, i]
        out += ((ai @ b) * eye + np.outer(ai, b)) @ J
    return out
