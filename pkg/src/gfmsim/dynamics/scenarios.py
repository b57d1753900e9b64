"""Paired simulator / "real" models at desk scale.

All geometry here is our own: a two-link arm with a disk paddle pushing a
small box inside a square tray, and a two-link arm in a vertical plane for
joint-space tracking. The "real" side is the same simulator with a scaled
actuator gain, extra joint viscosity, a position-dependent friction map,
first-order actuator lag and noisy state estimates.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from gfmsim.dynamics import kernels as K
from gfmsim.dynamics.core import advance
from gfmsim.dynamics.model import PLANAR, SPATIAL, ControlInput, ManifoldSpec, SystemModel, SystemState
from gfmsim.errors import ConfigurationError, ContractViolation

SCENARIOS = ("reacher-joint", "pusher-position", "pusher-pose")


@dataclass(frozen=True, eq=False)
class ScenarioPair:
    name: str
    seed: int
    sim_model: SystemModel
    real_model: SystemModel
    observation_noise: np.ndarray  # std per q channel
    initial_state: SystemState
    initial_jitter: np.ndarray  # std per q channel
    workspace: tuple[float, float, float, float]  # paddle bounds (xmin, xmax, ymin, ymax)
    control_rate: float = 20.0
    physics_step: float = 0.002

    def __post_init__(self):
        if self.sim_model.spec != self.real_model.spec:
            raise ContractViolation("sim and real models must share a ManifoldSpec")
        if abs(self.substeps * self.physics_step * self.control_rate - 1.0) > 1e-9:
            raise ContractViolation("control period must be an integer multiple of the physics step")

    @property
    def spec(self) -> ManifoldSpec:
        return self.sim_model.spec

    @property
    def substeps(self) -> int:
        return int(round(1.0 / (self.control_rate * self.physics_step)))

    @property
    def control_period(self) -> float:
        return 1.0 / self.control_rate

    def sample_initial_state(self, rng: np.random.Generator) -> SystemState:
        q = self.initial_state.q + self.initial_jitter * rng.standard_normal(self.spec.q_dim)
        for sl in self.spec.quaternion_slices():
            q[sl] /= np.linalg.norm(q[sl])
        return self.initial_state.replace(q=q)

    def with_models(self, sim_model=None, real_model=None, **changes) -> "ScenarioPair":
        return dataclasses.replace(
            self,
            sim_model=sim_model if sim_model is not None else self.sim_model,
            real_model=real_model if real_model is not None else self.real_model,
            **changes,
        )

    def tick(self, model: SystemModel, state: SystemState, setpoint, extra_force=None,
             gain_multiplier: float = 1.0, telemetry=None) -> SystemState:
        """Advance one control period holding a velocity setpoint."""
        return advance(model, state, ControlInput.velocity(setpoint), extra_force, self.physics_step,
                       self.substeps, gain_multiplier, telemetry, context=f"{self.name} t={state.time:.3f}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "sim_model": self.sim_model.to_dict(),
            "real_model": self.real_model.to_dict(),
            "observation_noise": self.observation_noise.tolist(),
            "initial_q": self.initial_state.q.tolist(),
            "initial_v": self.initial_state.v.tolist(),
            "initial_jitter": self.initial_jitter.tolist(),
            "workspace": list(self.workspace),
            "control_rate": self.control_rate,
            "physics_step": self.physics_step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioPair":
        sim = SystemModel.from_dict(d["sim_model"])
        return cls(
            name=d["name"],
            seed=int(d["seed"]),
            sim_model=sim,
            real_model=SystemModel.from_dict(d["real_model"]),
            observation_noise=np.asarray(d["observation_noise"], dtype=float),
            initial_state=SystemState(d["initial_q"], d["initial_v"], 0.0, np.zeros(sim.joint_dim)),
            initial_jitter=np.asarray(d["initial_jitter"], dtype=float),
            workspace=tuple(d["workspace"]),
            control_rate=float(d["control_rate"]),
            physics_step=float(d["physics_step"]),
        )


def _rod_inertia(m, length):
    return m * length ** 2 / 12.0


def _box_inertia(m, h):
    hx, hy, hz = h
    return (m * (hy ** 2 + hz ** 2) / 3.0, m * (hx ** 2 + hz ** 2) / 3.0, m * (hx ** 2 + hy ** 2) / 3.0)


def _perturb(sim: SystemModel, rng: np.random.Generator, fmap_joint: float, fmap_object: float,
             wavenumber: float, lag: float, extra_viscous: float) -> SystemModel:
    scale = rng.uniform(0.6, 0.9)
    return sim.replace(
        actuator_gain=sim.actuator_gain * scale,
        joint_viscous=tuple(b + extra_viscous for b in sim.joint_viscous),
        friction_map_joint=fmap_joint,
        friction_map_object=fmap_object,
        friction_map_wavenumber=wavenumber,
        actuator_lag=lag,
    )


def _reacher(seed: int) -> ScenarioPair:
    rng = np.random.default_rng(seed)
    masses = (1.0, 1.0)
    lengths = (0.3, 0.3)
    sim = SystemModel(
        spec=ManifoldSpec(2),
        link_masses=masses,
        link_lengths=lengths,
        link_inertias=tuple(_rod_inertia(m, l) for m, l in zip(masses, lengths)),
        joint_viscous=(0.05, 0.05),
        joint_dry=(0.02, 0.02),
        torque_limits=(20.0, 20.0),
        velocity_limits=(2.0, 2.0),
        arm_gravity=(0.0, -9.81),
        actuator_gain=6.0,
        actuator_damping=0.2,
    )
    real = _perturb(sim, rng, fmap_joint=0.6, fmap_object=0.0, wavenumber=3.0, lag=0.03, extra_viscous=0.15)
    init = SystemState(np.array([-np.pi / 2, 0.0]), np.zeros(2), 0.0, np.zeros(2))
    return ScenarioPair(
        name="reacher-joint",
        seed=seed,
        sim_model=sim,
        real_model=real,
        observation_noise=np.array([1e-3, 1e-3]),
        initial_state=init,
        initial_jitter=np.array([0.02, 0.02]),
        workspace=(-0.7, 0.7, -0.7, 0.7),
    )


def _settled_box_height(mass, half_z, stiffness, gravity):
    return half_z - mass * gravity / stiffness


def _pusher(seed: int, spatial: bool, name: str) -> ScenarioPair:
    rng = np.random.default_rng(seed)
    masses = (0.8, 0.5)
    lengths = (0.32, 0.3)
    box_mass = 0.3
    half = (0.03, 0.03, 0.03)
    kind = SPATIAL if spatial else PLANAR
    sim = SystemModel(
        spec=ManifoldSpec(2, (kind,)),
        link_masses=masses,
        link_lengths=lengths,
        link_inertias=tuple(_rod_inertia(m, l) for m, l in zip(masses, lengths)),
        joint_viscous=(0.05, 0.05),
        joint_dry=(0.01, 0.01),
        torque_limits=(6.0, 6.0),
        velocity_limits=(3.0, 3.0),
        base_xy=(0.0, -0.42),
        arm_gravity=(0.0, 0.0),
        actuator_gain=4.0,
        actuator_damping=0.1,
        body_masses=(box_mass,),
        body_inertias=(_box_inertia(box_mass, half),),
        body_half_extents=(half,),
        contact_stiffness=2000.0,
        contact_damping=15.0,
        friction_coefficient=0.3,
        paddle_friction=0.2,
        paddle_radius=0.025,
        walls=(-0.16, 0.16, -0.16, 0.16),
    )
    real = _perturb(sim, rng, fmap_joint=0.0, fmap_object=0.6, wavenumber=2 * np.pi / 0.16, lag=0.05,
                    extra_viscous=0.1)
    # arm folded so the paddle rests just below the box
    q_arm = _ik(sim, np.array([0.0, -0.085]))
    if spatial:
        z0 = _settled_box_height(box_mass, half[2], sim.contact_stiffness, sim.gravity)
        q_body = np.array([0.0, 0.0, z0, 1.0, 0.0, 0.0, 0.0])
        noise_body = np.array([2e-3, 2e-3, 1e-3, 5e-3, 5e-3, 5e-3, 5e-3])
        jitter_body = np.zeros(7)
    else:
        q_body = np.zeros(3)
        noise_body = np.array([2e-3, 2e-3, 0.01])
        jitter_body = np.zeros(3)
    q0 = np.concatenate([q_arm, q_body])
    init = SystemState(q0, np.zeros(sim.spec.v_dim), 0.0, np.zeros(2))
    return ScenarioPair(
        name=name,
        seed=seed,
        sim_model=sim,
        real_model=real,
        observation_noise=np.concatenate([[1e-3, 1e-3], noise_body]),
        initial_state=init,
        initial_jitter=np.concatenate([[0.01, 0.01], jitter_body]),
        workspace=(-0.2, 0.2, -0.25, 0.2),
    )


def one_dof_pair(seed: int = 0) -> ScenarioPair:
    """Single horizontal link with identical sim and real models.

    Used for known-gap experiments: the gap is whatever extra force the
    caller injects on the real side.
    """
    model = SystemModel(
        spec=ManifoldSpec(1),
        link_masses=(1.0,),
        link_lengths=(0.4,),
        link_inertias=(_rod_inertia(1.0, 0.4),),
        joint_viscous=(0.05,),
        joint_dry=(0.0,),
        torque_limits=(10.0,),
        velocity_limits=(3.0,),
        actuator_gain=2.0,
    )
    init = SystemState(np.zeros(1), np.zeros(1), 0.0, np.zeros(1))
    return ScenarioPair(
        name="one-dof",
        seed=seed,
        sim_model=model,
        real_model=model,
        observation_noise=np.zeros(1),
        initial_state=init,
        initial_jitter=np.zeros(1),
        workspace=(-1.0, 1.0, -1.0, 1.0),
    )


def _ik(model: SystemModel, target: np.ndarray) -> np.ndarray:
    """Elbow-right inverse kinematics of the two-link arm."""
    l1, l2 = model.link_lengths
    d = target - np.asarray(model.base_xy)
    r2 = float(d @ d)
    c2 = (r2 - l1 ** 2 - l2 ** 2) / (2 * l1 * l2)
    q2 = -np.arccos(np.clip(c2, -1.0, 1.0))
    q1 = np.arctan2(d[1], d[0]) - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    return np.array([q1, q2])


def make_scenario(name: str, seed: int = 0) -> ScenarioPair:
    """Build a deterministic (sim, real) pair for one of :data:`SCENARIOS`."""
    if name == "reacher-joint":
        return _reacher(seed)
    if name == "pusher-position":
        return _pusher(seed, spatial=False, name=name)
    if name == "pusher-pose":
        return _pusher(seed, spatial=True, name=name)
    raise ConfigurationError(f"unknown scenario {name!r}; valid names: {', '.join(SCENARIOS)}")


def body_heading(spec: ManifoldSpec, q: np.ndarray, body: int = 0) -> float:
    kind, sq, _ = list(spec.body_slices())[body]
    if kind == SPATIAL:
        return float(K.quat_yaw(q[sq][3:7]))
    return float(q[sq][2])


def body_position(spec: ManifoldSpec, q: np.ndarray, body: int = 0) -> np.ndarray:
    _, sq, _ = list(spec.body_slices())[body]
    return q[sq][:2].copy()


class StateEstimator:
    """Noisy pose measurement with finite-differenced body velocities.

    Joint angles and rates come from the (slightly noisy) encoders; free
    body velocities are reconstructed from consecutive pose estimates.
    """

    def __init__(self, pair: ScenarioPair, rng: np.random.Generator):
        self.pair = pair
        self.rng = rng
        self.prev: np.ndarray | None = None

    def reset(self) -> None:
        self.prev = None

    def __call__(self, state: SystemState) -> SystemState:
        spec = self.pair.spec
        noise = self.pair.observation_noise
        q = state.q + noise * self.rng.standard_normal(spec.q_dim)
        for sl in spec.quaternion_slices():
            q[sl] /= np.linalg.norm(q[sl])
            if q[sl.start] < 0:
                q[sl] = -q[sl]
        v = state.v.copy()
        n = spec.joint_dim
        v[:n] += noise[:n] * self.rng.standard_normal(n)
        h = self.pair.control_period
        for kind, sq, sv in spec.body_slices():
            if self.prev is None:
                v[sv] = 0.0 if np.any(noise[sq] > 0) else state.v[sv]
                continue
            if not np.any(noise[sq] > 0):
                continue
            cur, old = q[sq], self.prev[sq]
            if kind == SPATIAL:
                v[sv.start:sv.start + 3] = (cur[:3] - old[:3]) / h
                rel = K.quat_mul(_conj(old[3:]), cur[3:])
                if rel[0] < 0:
                    rel = -rel
                # body-frame rate from the relative rotation
                v[sv.start + 3:sv.stop] = 2.0 * rel[1:] / h
            else:
                d = cur - old
                d[2] = (d[2] + np.pi) % (2 * np.pi) - np.pi
                v[sv] = d / h
        self.prev = q.copy()
        return SystemState(q, v, state.time, None)


def _conj(qt):
    return np.array([qt[0], -qt[1], -qt[2], -qt[3]])
