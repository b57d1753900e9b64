"""Generalised force models (GFMs) and the hybrid simulator they define."""
from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from gfmsim.approximator import dumps_checkpoint, loads_checkpoint
from gfmsim.data import Trajectory
from gfmsim.distance import DistanceWeights, matching_reward
from gfmsim.dynamics.model import SPATIAL, ControlInput, ManifoldSpec, SystemModel, SystemState
from gfmsim.dynamics.scenarios import ScenarioPair
from gfmsim.errors import ConfigurationError, ContractViolation, CorruptFileError
from gfmsim.rl.networks import GaussianPolicy


@dataclass(frozen=True)
class ForceLimits:
    """Per-block magnitude limits for learned generalised forces."""

    joint: float = 5.0
    object_translation: float = 0.03
    object_rotation: float = 0.03

    def __post_init__(self):
        if min(self.joint, self.object_translation, self.object_rotation) <= 0:
            raise ContractViolation("force limits must be positive")

    def vector(self, spec: ManifoldSpec) -> np.ndarray:
        parts = [np.full(spec.joint_dim, self.joint)]
        for kind, _, _ in spec.body_slices():
            if kind == SPATIAL:
                parts += [np.full(3, self.object_translation), np.full(3, self.object_rotation)]
            else:
                parts += [np.full(2, self.object_translation), [self.object_rotation]]
        return np.concatenate(parts).astype(float)

    def to_dict(self) -> dict:
        return asdict(self)


def bound_force(raw, limits) -> np.ndarray:
    """Smooth saturation ``limit * tanh(raw / limit)`` per channel."""
    raw = np.asarray(raw, dtype=float)
    limits = np.asarray(limits, dtype=float)
    return limits * np.tanh(raw / limits)


@dataclass(frozen=True)
class GfmObservationSpec:
    """History of ``history`` previous states, the current state and (optionally) the action.

    ``q_scale``/``v_scale`` multiply each channel before it reaches the
    network; they do not change the information content.
    """

    history: int = 5
    include_action: bool = True
    q_scale: tuple[float, ...] = ()
    v_scale: tuple[float, ...] = ()
    action_scale: float = 1.0

    def __post_init__(self):
        if self.history < 1:
            raise ContractViolation("history length must be >= 1")

    @classmethod
    def for_spec(cls, spec: ManifoldSpec, history: int = 5, include_action: bool = True,
                 action_scale: float = 1.0) -> "GfmObservationSpec":
        q_scale = [1.0] * spec.joint_dim
        v_scale = [0.3] * spec.joint_dim
        for kind, _, _ in spec.body_slices():
            if kind == SPATIAL:
                q_scale += [10.0, 10.0, 10.0, 1.0, 1.0, 1.0, 1.0]
                v_scale += [3.0, 3.0, 3.0, 0.3, 0.3, 0.3]
            else:
                q_scale += [10.0, 10.0, 1.0]
                v_scale += [3.0, 3.0, 0.3]
        return cls(history, include_action, tuple(q_scale), tuple(v_scale), action_scale)

    def dim(self, spec: ManifoldSpec) -> int:
        per_state = spec.q_dim + spec.v_dim
        return (self.history + 1) * per_state + (spec.joint_dim if self.include_action else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q_scale"] = list(self.q_scale)
        d["v_scale"] = list(self.v_scale)
        return d


def gfm_observe(history, current: SystemState, recorded_action, obs_spec: GfmObservationSpec,
                spec: ManifoldSpec) -> np.ndarray:
    """Flatten ``history`` (oldest first, padded with its first entry) + current + action."""
    states = list(history)
    if not states:
        states = [current]
    for s in states + [current]:
        if s.q.shape != (spec.q_dim,) or s.v.shape != (spec.v_dim,):
            raise ContractViolation("state does not match the manifold spec")
    states = states[-obs_spec.history:]
    states = [states[0]] * (obs_spec.history - len(states)) + states
    qs = np.asarray(obs_spec.q_scale) if obs_spec.q_scale else 1.0
    vs = np.asarray(obs_spec.v_scale) if obs_spec.v_scale else 1.0
    parts = []
    for s in states + [current]:
        parts.append(s.q * qs)
        parts.append(s.v * vs)
    if obs_spec.include_action:
        a = np.asarray(recorded_action, dtype=float)
        if a.shape != (spec.joint_dim,):
            raise ContractViolation("recorded action width does not match joint_dim")
        parts.append(a * obs_spec.action_scale)
    return np.concatenate(parts)


@dataclass(eq=False)
class GeneralizedForceModel:
    """Policy over normalised forces; the applied force is ``limit * tanh(action)``."""

    policy: GaussianPolicy
    limits: ForceLimits
    obs_spec: GfmObservationSpec
    spec: ManifoldSpec
    chunk_id: int = 0

    def __post_init__(self):
        if self.policy.action_dim != self.spec.v_dim:
            raise ContractViolation("GFM output width must equal v_dim")
        if self.policy.obs_dim != self.obs_spec.dim(self.spec):
            raise ContractViolation("GFM input width does not match its observation spec")

    @property
    def limit_vector(self) -> np.ndarray:
        return self.limits.vector(self.spec)

    def force_from_action(self, action) -> np.ndarray:
        lim = self.limit_vector
        return bound_force(np.asarray(action) * lim, lim)

    def force(self, observation, rng: np.random.Generator | None = None, deterministic: bool = True) -> np.ndarray:
        mu, scale, _, _ = self.policy.distribution(observation)
        a = mu if deterministic or rng is None else mu + scale * rng.standard_normal(mu.shape)
        return self.force_from_action(a)

    # checkpoint = approximator checkpoint + JSON header in the extra block
    def dumps(self) -> bytes:
        header = {
            "kind": "gfm",
            "limits": self.limits.to_dict(),
            "obs_spec": self.obs_spec.to_dict(),
            "spec": {"joint_dim": self.spec.joint_dim, "free_bodies": list(self.spec.free_bodies)},
            "chunk_id": self.chunk_id,
            "action_dim": self.policy.action_dim,
        }
        return dumps_checkpoint(self.policy.params, None, json.dumps(header, sort_keys=True).encode())

    @classmethod
    def loads(cls, data: bytes) -> "GeneralizedForceModel":
        params, _, extra = loads_checkpoint(data)
        try:
            h = json.loads(extra.decode())
        except ValueError as exc:
            raise CorruptFileError(f"GFM header is not valid JSON: {exc}") from exc
        if h.get("kind") != "gfm":
            raise CorruptFileError("checkpoint is not a GFM")
        os_ = h["obs_spec"]
        obs_spec = GfmObservationSpec(int(os_["history"]), bool(os_["include_action"]), tuple(os_["q_scale"]),
                                      tuple(os_["v_scale"]), float(os_["action_scale"]))
        spec = ManifoldSpec(int(h["spec"]["joint_dim"]), tuple(h["spec"]["free_bodies"]))
        return cls(GaussianPolicy(params, int(h["action_dim"])), ForceLimits(**h["limits"]), obs_spec, spec,
                   int(h["chunk_id"]))


@dataclass(eq=False)
class HybridModel:
    """Analytical base model plus an ensemble of frozen GFMs (one used per episode)."""

    base: SystemModel
    gfms: list[GeneralizedForceModel] = field(default_factory=list)
    selection: str = "per-episode-uniform"

    def __post_init__(self):
        for g in self.gfms:
            if g.spec != self.base.spec:
                raise ContractViolation("every GFM must share the base model's manifold spec")

    @property
    def spec(self) -> ManifoldSpec:
        return self.base.spec

    def __len__(self) -> int:
        return len(self.gfms)


def ensemble_select(hybrid: HybridModel, episode_seed: int) -> int:
    """Uniform member index, deterministic in ``episode_seed``."""
    if len(hybrid.gfms) == 0:
        raise ConfigurationError("hybrid model has an empty GFM ensemble")
    return int(np.random.default_rng([int(episode_seed), 7919]).integers(len(hybrid.gfms)))


class HybridRollout:
    """Keeps the state history a GFM needs while stepping a hybrid model.

    With ``gfm_index=None`` (or an empty ensemble) it steps the base model
    with zero extra force.
    """

    def __init__(self, pair: ScenarioPair, hybrid: HybridModel, gfm_index: int | None, state: SystemState,
                 force_telemetry: list | None = None):
        self.pair = pair
        self.hybrid = hybrid
        self.gfm = hybrid.gfms[gfm_index] if (gfm_index is not None and hybrid.gfms) else None
        self.state = state
        h = self.gfm.obs_spec.history if self.gfm is not None else 1
        self.history: deque[SystemState] = deque([state], maxlen=h)
        self.force_telemetry = force_telemetry
        self.last_force = np.zeros(hybrid.spec.v_dim)

    def step(self, setpoint, gain_multiplier: float = 1.0, telemetry=None) -> SystemState:
        force = None
        if self.gfm is not None:
            obs = gfm_observe(self.history, self.state, setpoint, self.gfm.obs_spec, self.hybrid.spec)
            force = self.gfm.force(obs)
            self.last_force = force
            if self.force_telemetry is not None:
                self.force_telemetry.append(np.max(np.abs(force) / self.gfm.limit_vector))
        nxt = self.pair.tick(self.hybrid.base, self.state, setpoint, force, gain_multiplier, telemetry)
        self.history.append(self.state)
        self.state = nxt
        return nxt


def hybrid_step(hybrid: HybridModel, gfm_index: int, state: SystemState, history, control: ControlInput,
                pair: ScenarioPair, gain_multiplier: float = 1.0) -> SystemState:
    """One control tick of the hybrid model; the GFM force is held across substeps."""
    if not 0 <= gfm_index < len(hybrid.gfms):
        raise ContractViolation(f"gfm_index {gfm_index} outside ensemble of {len(hybrid.gfms)}")
    gfm = hybrid.gfms[gfm_index]
    obs = gfm_observe(history, state, control.values, gfm.obs_spec, hybrid.spec)
    force = gfm.force(obs)
    return pair.tick(hybrid.base, state, control.values, force, gain_multiplier)


class GfmEnvironment:
    """RL environment whose actions are generalised forces injected into the base model.

    Each episode replays one recorded trajectory from its first state,
    applying the recorded actions; the reward is the matching reward
    between the recorded next state and the simulated one.

    With ``critic_features`` the observation gains a trailing block only
    the critic sees: the recorded current and next states and the episode
    progress. The GFM itself still observes only simulator history and the
    recorded action.
    """

    def __init__(self, pair: ScenarioPair, base: SystemModel, trajectories: list[Trajectory],
                 weights: DistanceWeights, limits: ForceLimits, obs_spec: GfmObservationSpec,
                 rng: np.random.Generator, critic_features: bool = False):
        if not trajectories:
            raise ContractViolation("GFM environment needs at least one trajectory")
        for tr in trajectories:
            tr.check(base.spec)
        self.pair = pair
        self.base = base
        self.trajectories = trajectories
        self.weights = weights
        self.limits = limits
        self.limit_vector = limits.vector(base.spec)
        self.obs_spec = obs_spec
        self.rng = rng
        self.spec = base.spec
        self.policy_observation_dim = obs_spec.dim(base.spec)
        self.critic_features = critic_features
        extra = 2 * (base.spec.q_dim + base.spec.v_dim) + 1 if critic_features else 0
        self.observation_dim = self.policy_observation_dim + extra
        self.action_dim = base.spec.v_dim
        self.force_log: list[float] = []
        self.traj: Trajectory | None = None
        self.t = 0
        self.fixed_index: int | None = None

    def _observe(self) -> np.ndarray:
        T = len(self.traj)
        a = self.traj.actions[self.t] if self.t < T else np.zeros(self.spec.joint_dim)
        obs = gfm_observe(self.history, self.state, a, self.obs_spec, self.spec)
        if not self.critic_features:
            return obs
        qs = np.asarray(self.obs_spec.q_scale) if self.obs_spec.q_scale else 1.0
        vs = np.asarray(self.obs_spec.v_scale) if self.obs_spec.v_scale else 1.0
        ref = [self.traj.state(min(k, T)) for k in (self.t, self.t + 1)]
        parts = [obs]
        for r in ref:
            parts += [r.q * qs, r.v * vs]
        parts.append([self.t / T])
        return np.concatenate(parts)

    def reset(self) -> np.ndarray:
        idx = self.fixed_index if self.fixed_index is not None else int(self.rng.integers(len(self.trajectories)))
        self.traj = self.trajectories[idx]
        x0 = self.traj.state(0)
        self.state = SystemState(x0.q, x0.v, x0.time, np.zeros(self.spec.joint_dim))
        self.history = deque([self.state], maxlen=self.obs_spec.history)
        self.t = 0
        return self._observe()

    @property
    def done(self) -> bool:
        return self.traj is None or self.t >= len(self.traj)

    def step(self, action):
        if self.done:
            raise ContractViolation("stepping a GFM episode past the end of its trajectory")
        raw = np.asarray(action, dtype=float) * self.limit_vector
        force = bound_force(raw, self.limit_vector)
        self.force_log.append(float(np.max(np.abs(force) / self.limit_vector)))
        t = self.t
        nxt = self.pair.tick(self.base, self.state, self.traj.actions[t], force, float(self.traj.gains[t]))
        self.history.append(self.state)
        self.state = nxt
        self.t += 1
        reward = matching_reward(self.traj.state(self.t), nxt, self.weights, self.spec)
        return self._observe(), reward, self.t >= len(self.traj)


def make_gfm_environment(pair: ScenarioPair, base: SystemModel, chunk: list[Trajectory], weights: DistanceWeights,
                         limits: ForceLimits, obs_spec: GfmObservationSpec | None = None,
                         seed: int = 0, critic_features: bool = False) -> GfmEnvironment:
    obs_spec = obs_spec or GfmObservationSpec.for_spec(base.spec)
    return GfmEnvironment(pair, base, list(chunk), weights, limits, obs_spec, np.random.default_rng(seed),
                          critic_features)
