"""Value types for configurations, states, models and control inputs."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from gfmsim.dynamics import kernels as K
from gfmsim.errors import ContractViolation

PLANAR = "planar"
SPATIAL = "spatial"


@dataclass(frozen=True)
class ManifoldSpec:
    """Layout of ``q`` and ``v``: revolute joints first, then free bodies."""

    joint_dim: int
    free_bodies: tuple[str, ...] = ()

    def __post_init__(self):
        if self.joint_dim < 0:
            raise ContractViolation("joint_dim must be non-negative")
        for kind in self.free_bodies:
            if kind not in (PLANAR, SPATIAL):
                raise ContractViolation(f"unknown body kind {kind!r}")

    @property
    def q_dim(self) -> int:
        return self.joint_dim + sum(7 if k == SPATIAL else 3 for k in self.free_bodies)

    @property
    def v_dim(self) -> int:
        return self.joint_dim + sum(6 if k == SPATIAL else 3 for k in self.free_bodies)

    @property
    def unactuated_dim(self) -> int:
        return self.v_dim - self.joint_dim

    def body_slices(self):
        """Yield ``(kind, q_slice, v_slice)`` for each free body."""
        iq = iv = self.joint_dim
        for kind in self.free_bodies:
            nq, nv = (7, 6) if kind == SPATIAL else (3, 3)
            yield kind, slice(iq, iq + nq), slice(iv, iv + nv)
            iq += nq
            iv += nv

    def quaternion_slices(self) -> list[slice]:
        return [slice(sq.start + 3, sq.stop) for kind, sq, _ in self.body_slices() if kind == SPATIAL]


@dataclass(frozen=True, eq=False)
class SystemState:
    q: np.ndarray
    v: np.ndarray
    time: float = 0.0
    # applied actuator torque; only evolves when the model has actuator lag
    act: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.act is not None:
            object.__setattr__(self, "act", np.asarray(self.act, dtype=float))

    def validate(self, spec: ManifoldSpec, tol: float = 1e-9) -> None:
        if self.q.shape != (spec.q_dim,) or self.v.shape != (spec.v_dim,):
            raise ContractViolation(
                f"state dims q={self.q.shape} v={self.v.shape} do not match spec "
                f"q_dim={spec.q_dim} v_dim={spec.v_dim}"
            )
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.v))):
            raise ContractViolation("state has non-finite entries")
        for sl in spec.quaternion_slices():
            n = np.linalg.norm(self.q[sl])
            if abs(n - 1.0) > tol:
                raise ContractViolation(f"quaternion norm {n!r} outside 1 +/- {tol}")

    def actuator(self, joint_dim: int) -> np.ndarray:
        return np.zeros(joint_dim) if self.act is None else self.act

    def replace(self, **changes) -> "SystemState":
        return dataclasses.replace(self, **changes)

    def copy(self) -> "SystemState":
        return SystemState(self.q.copy(), self.v.copy(), self.time, None if self.act is None else self.act.copy())

    def equals(self, other: "SystemState") -> bool:
        return (
            np.array_equal(self.q, other.q)
            and np.array_equal(self.v, other.v)
            and self.time == other.time
        )


@dataclass(frozen=True, eq=False)
class ControlInput:
    mode: str
    values: np.ndarray

    def __post_init__(self):
        if self.mode not in ("torque", "velocity_setpoint"):
            raise ContractViolation(f"unknown control mode {self.mode!r}")
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ContractViolation("control values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def velocity(cls, values) -> "ControlInput":
        return cls("velocity_setpoint", values)

    @classmethod
    def torque(cls, values) -> "ControlInput":
        return cls("torque", values)


@dataclass(frozen=True)
class SystemModel:
    """Parametric analytical model.

    Arm parameters are per-link tuples; body parameters are per free body.
    ``friction_map_*`` and ``actuator_lag`` are the unmodelled-effect hooks
    and stay at zero for simulator-side models.
    """

    spec: ManifoldSpec
    link_masses: tuple[float, ...] = ()
    link_lengths: tuple[float, ...] = ()
    link_inertias: tuple[float, ...] = ()
    joint_viscous: tuple[float, ...] = ()
    joint_dry: tuple[float, ...] = ()
    torque_limits: tuple[float, ...] = ()
    velocity_limits: tuple[float, ...] = ()
    base_xy: tuple[float, float] = (0.0, 0.0)
    arm_gravity: tuple[float, float] = (0.0, 0.0)
    gravity: float = 9.81
    actuator_gain: float = 1.0
    actuator_damping: float = 0.0
    body_masses: tuple[float, ...] = ()
    body_inertias: tuple[tuple[float, float, float], ...] = ()
    body_half_extents: tuple[tuple[float, float, float], ...] = ()
    contact_stiffness: float = 1000.0
    contact_damping: float = 10.0
    friction_coefficient: float = 0.3
    paddle_friction: float = 0.2
    paddle_radius: float = 0.0
    walls: tuple[float, float, float, float] | None = None
    slip_epsilon: float = 0.02
    joint_slip_epsilon: float = 0.1
    friction_map_joint: float = 0.0
    friction_map_object: float = 0.0
    friction_map_wavenumber: float = 0.0
    actuator_lag: float = 0.0

    def __post_init__(self):
        n = self.spec.joint_dim
        nb = len(self.spec.free_bodies)
        for name in ("link_masses", "link_lengths", "link_inertias", "joint_viscous", "joint_dry",
                     "torque_limits", "velocity_limits"):
            val = tuple(float(x) for x in getattr(self, name))
            object.__setattr__(self, name, val)
            if len(val) != n:
                raise ContractViolation(f"{name} has {len(val)} entries, expected {n}")
        for name in ("body_masses",):
            val = tuple(float(x) for x in getattr(self, name))
            object.__setattr__(self, name, val)
            if len(val) != nb:
                raise ContractViolation(f"{name} has {len(val)} entries, expected {nb}")
        for name in ("body_inertias", "body_half_extents"):
            val = tuple(tuple(float(x) for x in row) for row in getattr(self, name))
            object.__setattr__(self, name, val)
            if len(val) != nb or any(len(r) != 3 for r in val):
                raise ContractViolation(f"{name} must hold one 3-tuple per body")
        positive = list(self.link_masses) + list(self.link_lengths) + list(self.link_inertias)
        positive += list(self.body_masses) + [x for r in self.body_inertias for x in r]
        positive += [x for r in self.body_half_extents for x in r] + [self.contact_stiffness]
        if any(not x > 0 for x in positive):
            raise ContractViolation("masses, inertias, lengths and contact stiffness must be > 0")
        nonneg = list(self.joint_viscous) + list(self.joint_dry) + [
            self.friction_coefficient, self.paddle_friction, self.actuator_lag, self.contact_damping,
            self.actuator_damping,
        ]
        if any(not x >= 0 for x in nonneg):
            raise ContractViolation("friction, damping and lag parameters must be >= 0")

    @property
    def joint_dim(self) -> int:
        return self.spec.joint_dim

    def replace(self, **changes) -> "SystemModel":
        return dataclasses.replace(self, **changes)

    def without_unmodeled_effects(self) -> "SystemModel":
        return self.replace(friction_map_joint=0.0, friction_map_object=0.0, actuator_lag=0.0)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["spec"] = {"joint_dim": self.spec.joint_dim, "free_bodies": list(self.spec.free_bodies)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemModel":
        d = dict(d)
        spec = d.pop("spec")
        d["spec"] = ManifoldSpec(int(spec["joint_dim"]), tuple(spec["free_bodies"]))
        for key in ("base_xy", "arm_gravity"):
            d[key] = tuple(d[key])
        if d.get("walls") is not None:
            d["walls"] = tuple(d["walls"])
        return cls(**d)

    # packed arrays consumed by the kernels
    @cached_property
    def packed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.spec.joint_dim
        arm = np.zeros((n, K.N_ARM_COLS))
        arm[:, K.A_MASS] = self.link_masses
        arm[:, K.A_LENGTH] = self.link_lengths
        arm[:, K.A_INERTIA] = self.link_inertias
        arm[:, K.A_VISCOUS] = self.joint_viscous
        arm[:, K.A_DRY] = self.joint_dry
        arm[:, K.A_TORQUE_LIMIT] = self.torque_limits
        arm[:, K.A_VELOCITY_LIMIT] = self.velocity_limits
        nb = len(self.spec.free_bodies)
        bodies = np.zeros((nb, K.N_BODY_COLS))
        for b, kind in enumerate(self.spec.free_bodies):
            bodies[b, K.B_KIND] = 1.0 if kind == SPATIAL else 0.0
            bodies[b, K.B_MASS] = self.body_masses[b]
            bodies[b, K.B_IXX:K.B_IZZ + 1] = self.body_inertias[b]
            bodies[b, K.B_HX:K.B_HZ + 1] = self.body_half_extents[b]
        fp = np.zeros(K.N_SCALARS)
        fp[K.P_GRAVITY] = self.gravity
        fp[K.P_GAIN] = self.actuator_gain
        fp[K.P_DAMPING] = self.actuator_damping
        fp[K.P_STIFFNESS] = self.contact_stiffness
        fp[K.P_CONTACT_DAMPING] = self.contact_damping
        fp[K.P_MU] = self.friction_coefficient
        fp[K.P_MU_PADDLE] = self.paddle_friction
        fp[K.P_PADDLE_RADIUS] = self.paddle_radius
        fp[K.P_BASE_X], fp[K.P_BASE_Y] = self.base_xy
        fp[K.P_ARM_GX], fp[K.P_ARM_GY] = self.arm_gravity
        fp[K.P_LAG] = self.actuator_lag
        fp[K.P_FMAP_JOINT] = self.friction_map_joint
        fp[K.P_FMAP_OBJECT] = self.friction_map_object
        fp[K.P_FMAP_K] = self.friction_map_wavenumber
        if self.walls is not None:
            fp[K.P_HAS_WALLS] = 1.0
            fp[K.P_WALL_XMIN], fp[K.P_WALL_XMAX], fp[K.P_WALL_YMIN], fp[K.P_WALL_YMAX] = self.walls
        fp[K.P_SLIP_EPS] = self.slip_epsilon
        fp[K.P_JOINT_EPS] = self.joint_slip_epsilon
        for arr in (arm, bodies, fp):
            arr.setflags(write=False)
        return arm, bodies, fp


def zero_state(spec: ManifoldSpec) -> SystemState:
    q = np.zeros(spec.q_dim)
    for sl in spec.quaternion_slices():
        q[sl.start] = 1.0
    return SystemState(q, np.zeros(spec.v_dim), 0.0, np.zeros(spec.joint_dim))


@dataclass
class Telemetry:
    """Running counters filled by the integrator."""

    counters: np.ndarray = field(default_factory=lambda: np.zeros(5))

    @property
    def max_normal_force(self) -> float:
        return float(self.counters[0])

    @property
    def max_friction_ratio(self) -> float:
        return float(self.counters[1])

    @property
    def contact_events(self) -> int:
        return int(self.counters[2])

    @property
    def setpoint_clamps(self) -> int:
        return int(self.counters[3])

    @property
    def torque_clamps(self) -> int:
        return int(self.counters[4])
