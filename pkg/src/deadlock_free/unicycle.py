"""Near-identity map from single-integrator velocities to unicycle commands.

A point held a distance ``l`` ahead of the axle moves with exactly the
commanded planar velocity ``u`` when (v, w) = M(theta) u with

    M = [[cos th,      sin th     ],
         [-sin th / l, cos th / l ]].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_OFFSET = 0.1


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(theta + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class UnicyclePose:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def offset_point(self, l: float = DEFAULT_OFFSET) -> np.ndarray:
        return np.array([self.x + l * math.cos(self.theta),
                         self.y + l * math.sin(self.theta)])


def _check_offset(l: float) -> None:
    if not l > 0.0:
        raise ValueError(f"offset distance l must be positive, got {l}")


def nid_matrix(theta: float, l: float = DEFAULT_OFFSET) -> np.ndarray:
    _check_offset(l)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s / l, c / l]])


def nid_map(u, pose: UnicyclePose, l: float = DEFAULT_OFFSET) -> tuple[float, float]:
    """Linear and angular velocity (v, w) realising planar velocity ``u``."""
    v, w = nid_matrix(pose.theta, l) @ np.asarray(u, dtype=float)
    return float(v), float(w)


def nid_inverse(v: float, w: float, pose: UnicyclePose,
                l: float = DEFAULT_OFFSET) -> np.ndarray:
    """Offset-point velocity produced by (v, w)."""
    _check_offset(l)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return np.array([c * v - l * s * w, s * v + l * c * w])


def unicycle_step(pose: UnicyclePose, v: float, w: float, dt: float) -> UnicyclePose:
    """Explicit Euler step of x' = v cos th, y' = v sin th, th' = w."""
    return UnicyclePose(pose.x + dt * v * math.cos(pose.theta),
                        pose.y + dt * v * math.sin(pose.theta),
                        pose.theta + dt * w)


def offset_velocity_error(u, pose: UnicyclePose, dt: float,
                          l: float = DEFAULT_OFFSET) -> float:
    """|dp/dt - u| for the offset point over one Euler step of the plant."""
    v, w = nid_map(u, pose, l)
    nxt = unicycle_step(pose, v, w, dt)
    # difference the unwrapped heading so the offset point stays continuous
    p0 = pose.offset_point(l)
    th1 = pose.theta + dt * w
    p1 = np.array([nxt.x + l * math.cos(th1), nxt.y + l * math.sin(th1)])
    return float(np.linalg.norm((p1 - p0) / dt - np.asarray(u, dtype=float)))


def map_controls(controls, theta0: float, dt: float,
                 l: float = DEFAULT_OFFSET) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(v, w, theta) along a control sequence, integrating theta' = w.

    theta[k] is the heading at which controls[k] is mapped.
    """
    _check_offset(l)
    u = np.asarray(controls, dtype=float)
    T = u.shape[0]
    v = np.empty(T)
    w = np.empty(T)
    th = np.empty(T)
    cur = wrap_angle(theta0)
    for k in range(T):
        th[k] = cur
        c, s = math.cos(cur), math.sin(cur)
        v[k] = c * u[k, 0] + s * u[k, 1]
        w[k] = (-s * u[k, 0] + c * u[k, 1]) / l
        cur = wrap_angle(cur + dt * w[k])
    return v, w, th
