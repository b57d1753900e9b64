"""State difference and the exponential trajectory-matching reward."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from gfmsim.dynamics import kernels as K
from gfmsim.dynamics.model import SPATIAL, ManifoldSpec, SystemState
from gfmsim.errors import ContractViolation


@dataclass(frozen=True)
class DistanceWeights:
    """Per channel-group scale factors (residual units become dimensionless).

    Defaults: positions weighted 1/0.1 m, angles 1/rad, velocities at 0.1x
    their configuration counterpart.
    """

    joint_angle: float = 1.0
    joint_velocity: float = 0.1
    object_position: float = 10.0
    object_orientation: float = 1.0
    object_linear_velocity: float = 1.0
    object_angular_velocity: float = 0.1
    include_velocities: bool = True

    def __post_init__(self):
        vals = [self.joint_angle, self.joint_velocity, self.object_position, self.object_orientation,
                self.object_linear_velocity, self.object_angular_velocity]
        if any(not (w >= 0 and np.isfinite(w)) for w in vals):
            raise ContractViolation("distance weights must be finite and >= 0")
        if not any(w > 0 for w in vals):
            raise ContractViolation("at least one distance weight must be positive")

    def scaled(self, factor: float) -> "DistanceWeights":
        d = asdict(self)
        for k, v in d.items():
            if k != "include_velocities":
                d[k] = v * factor
        return DistanceWeights(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def quat_product(a, b) -> np.ndarray:
    """Hamilton product ``a * b`` of ``(w, x, y, z)`` quaternions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return K.quat_mul(a, b)


def quat_conjugate(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.array([a[0], -a[1], -a[2], -a[3]])


def orientation_residual(x_quat, s_quat) -> np.ndarray:
    """Vector part of ``s * conj(x)`` with the scalar part made non-negative."""
    rel = quat_product(s_quat, quat_conjugate(x_quat))
    if rel[0] < 0:
        rel = -rel
    return rel[1:]


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def state_distance(x: SystemState, s: SystemState, w: DistanceWeights, spec: ManifoldSpec) -> np.ndarray:
    """Weighted residual between a reference state ``x`` and a model state ``s``."""
    for st in (x, s):
        if st.q.shape != (spec.q_dim,) or st.v.shape != (spec.v_dim,):
            raise ContractViolation("states do not match the manifold spec")
    n = spec.joint_dim
    parts = [w.joint_angle * (x.q[:n] - s.q[:n])]
    for kind, sq, _ in spec.body_slices():
        xq, sq_ = x.q[sq], s.q[sq]
        if kind == SPATIAL:
            parts.append(w.object_position * (xq[:3] - sq_[:3]))
            parts.append(w.object_orientation * orientation_residual(xq[3:], sq_[3:]))
        else:
            parts.append(w.object_position * (xq[:2] - sq_[:2]))
            parts.append(w.object_orientation * np.atleast_1d(_wrap(xq[2] - sq_[2])))
    if w.include_velocities:
        parts.append(w.joint_velocity * (x.v[:n] - s.v[:n]))
        for kind, _, sv in spec.body_slices():
            dv = x.v[sv] - s.v[sv]
            if kind == SPATIAL:
                parts.append(w.object_linear_velocity * dv[:3])
                parts.append(w.object_angular_velocity * dv[3:])
            else:
                parts.append(w.object_linear_velocity * dv[:2])
                parts.append(w.object_angular_velocity * dv[2:])
    return np.concatenate(parts)


def matching_reward(x: SystemState, s: SystemState, w: DistanceWeights, spec: ManifoldSpec) -> float:
    """``exp(-||state_distance||^2)``; 1 exactly when the weighted residual vanishes."""
    r = state_distance(x, s, w, spec)
    return float(np.exp(-(r @ r)))
