"""Equations of motion, contact forces and the fixed-step integrator."""
from __future__ import annotations

import numpy as np

from gfmsim.dynamics import kernels as K
from gfmsim.dynamics.model import ControlInput, SystemModel, SystemState, Telemetry
from gfmsim.errors import ContractViolation, DivergenceError, NumericalError


def _check_q(model: SystemModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.spec.q_dim,):
        raise ContractViolation(f"q has shape {q.shape}, expected ({model.spec.q_dim},)")
    return q


def _check_state(model: SystemModel, state: SystemState) -> None:
    spec = model.spec
    if state.q.shape != (spec.q_dim,) or state.v.shape != (spec.v_dim,):
        raise ContractViolation(
            f"state dims q={state.q.shape} v={state.v.shape} do not match q_dim={spec.q_dim} v_dim={spec.v_dim}"
        )


def _force_vector(model: SystemModel, extra_force) -> np.ndarray:
    if extra_force is None:
        return np.zeros(model.spec.v_dim)
    f = np.asarray(extra_force, dtype=float)
    if f.shape != (model.spec.v_dim,):
        raise ContractViolation(f"extra_force has shape {f.shape}, expected ({model.spec.v_dim},)")
    return f


def mass_matrix(model: SystemModel, q) -> np.ndarray:
    arm, bodies, fp = model.packed
    return K.mass_matrix_kernel(_check_q(model, q), arm, bodies, fp)


def bias_forces(model: SystemModel, state: SystemState) -> np.ndarray:
    """Coriolis, centrifugal, gravity, gyroscopic and joint friction forces."""
    _check_state(model, state)
    arm, bodies, fp = model.packed
    return K.bias_kernel(state.q, state.v, arm, bodies, fp)


def contact_forces(model: SystemModel, state: SystemState, telemetry: Telemetry | None = None) -> np.ndarray:
    """Generalised forces from all penalty contacts (``sum J_k^T f_k``)."""
    _check_state(model, state)
    arm, bodies, fp = model.packed
    tel = telemetry.counters if telemetry is not None else np.zeros(5)
    return K.contact_kernel(state.q, state.v, arm, bodies, fp, tel)


def _torque_vector(model: SystemModel, tau) -> np.ndarray:
    if tau is None:
        return np.zeros(model.joint_dim)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (model.joint_dim,):
        raise ContractViolation(f"tau has shape {tau.shape}, expected ({model.joint_dim},)")
    return tau


def forward_dynamics(model: SystemModel, state: SystemState, tau=None, extra_force=None) -> np.ndarray:
    """Solve ``M a = [tau; 0] + J^T f + extra_force - c`` for the acceleration.

    Joint torques occupy the leading (actuated) block of the velocity
    vector; the free-body block is unactuated.
    """
    _check_state(model, state)
    arm, bodies, fp = model.packed
    a, ok = K.accel_kernel(state.q, state.v, _torque_vector(model, tau), _force_vector(model, extra_force),
                           arm, bodies, fp, np.zeros(5))
    if not ok:
        raise NumericalError(f"mass matrix is not positive definite at q={state.q.tolist()}")
    return a


def velocity_controller(model: SystemModel, state: SystemState, setpoint, gain_multiplier: float = 1.0,
                        telemetry: Telemetry | None = None) -> np.ndarray:
    """Joint torque from the low-level velocity loop (setpoint and torque clamped)."""
    arm, bodies, fp = model.packed
    setpoint = _torque_vector(model, setpoint)
    tel = telemetry.counters if telemetry is not None else np.zeros(5)
    return K.controller_kernel(state.v[: model.joint_dim], setpoint, float(gain_multiplier), arm, fp, tel)


def advance(model: SystemModel, state: SystemState, control: ControlInput, extra_force=None, dt: float = 0.002,
            substeps: int = 1, gain_multiplier: float = 1.0, telemetry: Telemetry | None = None,
            context: str = "") -> SystemState:
    """Run ``substeps`` physics steps of size ``dt`` holding control and force."""
    _check_state(model, state)
    if control.values.shape != (model.joint_dim,):
        raise ContractViolation(f"control has {control.values.shape}, expected ({model.joint_dim},)")
    arm, bodies, fp = model.packed
    mode = K.MODE_VELOCITY if control.mode == "velocity_setpoint" else K.MODE_TORQUE
    tel = telemetry.counters if telemetry is not None else np.zeros(5)
    q, v, act, status = K.integrate_kernel(
        state.q, state.v, state.actuator(model.joint_dim), control.values, mode, float(gain_multiplier),
        _force_vector(model, extra_force), float(dt), int(substeps), arm, bodies, fp, tel,
    )
    if status == 1:
        raise NumericalError(f"mass matrix is not positive definite at q={q.tolist()}")
    if status == 2:
        where = f" ({context})" if context else ""
        raise DivergenceError(f"state diverged at t={state.time:.4f}{where}")
    return SystemState(q, v, state.time + substeps * dt, act)


def step(model: SystemModel, state: SystemState, control: ControlInput, extra_force=None, dt: float = 0.002,
         **kwargs) -> SystemState:
    """One semi-implicit Euler physics step (velocity first, then configuration)."""
    return advance(model, state, control, extra_force, dt, 1, **kwargs)


def tip_position(model: SystemModel, q) -> np.ndarray:
    arm, bodies, fp = model.packed
    return K.tip_position(_check_q(model, q), arm, fp)


def kinetic_energy(model: SystemModel, state: SystemState) -> float:
    return 0.5 * float(state.v @ mass_matrix(model, state.q) @ state.v)


def potential_energy(model: SystemModel, state: SystemState) -> float:
    """Gravity potential of the arm links and of spatial bodies."""
    n = model.joint_dim
    theta = np.cumsum(state.q[:n])
    lengths = np.asarray(model.link_lengths)
    g = np.asarray(model.arm_gravity)
    energy = 0.0
    joint = np.asarray(model.base_xy, dtype=float)
    for i in range(n):
        u = np.array([np.cos(theta[i]), np.sin(theta[i])])
        com = joint + 0.5 * lengths[i] * u
        energy -= model.link_masses[i] * float(g @ com)
        joint = joint + lengths[i] * u
    for b, (kind, sq, _) in enumerate(model.spec.body_slices()):
        if kind == "spatial":
            energy += model.body_masses[b] * model.gravity * state.q[sq.start + 2]
    return energy


def total_energy(model: SystemModel, state: SystemState) -> float:
    return kinetic_energy(model, state) + potential_energy(model, state)


def body_momentum(model: SystemModel, state: SystemState, body: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """World-frame linear and angular momentum (about the COM) of one free body."""
    kind, sq, sv = list(model.spec.body_slices())[body]
    m = model.body_masses[body]
    inertia = np.asarray(model.body_inertias[body])
    v = state.v[sv]
    if kind == "spatial":
        R = K.quat_to_matrix(state.q[sq][3:7])
        return m * v[:3], R @ (inertia * v[3:])
    return m * np.array([v[0], v[1], 0.0]), np.array([0.0, 0.0, inertia[2] * v[2]])
