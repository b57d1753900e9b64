"""Pipeline orchestration: data collection, GFM ensembles, task training and evaluation."""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from gfmsim.data import Trajectory, TrajectoryDataset
from gfmsim.distance import DistanceWeights
from gfmsim.dynamics.model import SystemModel, SystemState
from gfmsim.dynamics.scenarios import ScenarioPair, StateEstimator, body_heading, body_position
from gfmsim.dynamics.core import tip_position
from gfmsim.errors import ConfigurationError, ContractViolation, DivergenceError, NumericalError
from gfmsim.hybrid import (
    ForceLimits,
    GeneralizedForceModel,
    GfmObservationSpec,
    HybridModel,
    HybridRollout,
    ensemble_select,
    make_gfm_environment,
)
from gfmsim.rl.learner import EpisodeRecord, Learner, LearnerConfig
from gfmsim.rl.networks import GaussianPolicy

log = logging.getLogger(__name__)

POSITION_MATCH = "position_match"
POSE_MATCH = "pose_match"


# ---------------------------------------------------------------- task spec


@dataclass(frozen=True)
class TaskSpec:
    """Target-matching task on a pusher scenario.

    Lengths are in control ticks, distances in metres, angles in radians.
    """

    task: str = POSITION_MATCH
    episode_length: int = 400
    history: int = 10
    n_targets: int = 10
    target_radius: float = 0.06
    position_threshold: float = 0.02
    heading_threshold: float = math.radians(20.0)
    consecutive: int = 10
    action_fraction: float = 0.05
    heading_span: float = 2 * math.pi
    shaping: float = 0.0  # weight of the optional potential-based progress term

    def __post_init__(self):
        if self.task not in (POSITION_MATCH, POSE_MATCH):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if min(self.position_threshold, self.heading_threshold, self.target_radius) <= 0:
            raise ConfigurationError("task thresholds and target radius must be > 0")
        if self.episode_length <= self.consecutive:
            raise ConfigurationError("episode length must exceed the consecutive-success window")
        if self.history < 1 or self.n_targets < 1:
            raise ConfigurationError("history and n_targets must be >= 1")
        if self.shaping < 0:
            raise ConfigurationError("shaping must be >= 0")

    @classmethod
    def position(cls, **kw) -> "TaskSpec":
        return cls(task=POSITION_MATCH, **kw)

    @classmethod
    def pose(cls, **kw) -> "TaskSpec":
        kw.setdefault("episode_length", 600)
        kw.setdefault("position_threshold", 0.04)
        return cls(task=POSE_MATCH, **kw)

    @property
    def is_pose(self) -> bool:
        return self.task == POSE_MATCH

    def replace(self, **kw) -> "TaskSpec":
        d = asdict(self)
        d.update(kw)
        return TaskSpec(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Target:
    position: tuple[float, float]
    heading: float = 0.0


def radial_targets(task: TaskSpec, pair: ScenarioPair | None = None, n: int | None = None) -> list[Target]:
    """``n`` targets evenly spaced in angle on a circle around the tray centre."""
    n = task.n_targets if n is None else n
    if n < 1:
        raise ConfigurationError("need at least one target")
    r = task.target_radius
    if pair is not None:
        walls = pair.sim_model.walls
        if walls is not None:
            half = max(pair.sim_model.body_half_extents[0][:2])
            inner = min(walls[1] - half, -walls[0] - half, walls[3] - half, -walls[2] - half)
            if r >= inner:
                raise ConfigurationError(f"target radius {r} does not fit inside the tray (max {inner:.3f})")
    out = []
    for k in range(n):
        ang = 2 * np.pi * k / n
        heading = -task.heading_span / 2 + task.heading_span * k / n if task.is_pose else 0.0
        out.append(Target((r * np.cos(ang), r * np.sin(ang)), float(heading)))
    return out


@dataclass(frozen=True)
class CurriculumSchedule:
    start: float = 6.0
    end: float = 1.0
    step: float = 1.0
    episodes_per_step: int = 200

    def __post_init__(self):
        if not self.start >= self.end >= 1.0:
            raise ConfigurationError("curriculum needs start >= end >= 1")
        if self.step <= 0 or self.episodes_per_step < 1:
            raise ConfigurationError("curriculum step and episodes_per_step must be positive")

    @classmethod
    def fixed(cls, gain: float = 1.0) -> "CurriculumSchedule":
        return cls(gain, gain, 1.0, 1)

    @property
    def total_episodes(self) -> int:
        """Episodes until the end gain is reached, plus one block at the end gain."""
        steps = math.ceil((self.start - self.end) / self.step)
        return (steps + 1) * self.episodes_per_step

    def to_dict(self) -> dict:
        return asdict(self)


def curriculum_gain(episode: int, schedule: CurriculumSchedule) -> float:
    if episode < 0:
        raise ContractViolation("episode index must be >= 0")
    return float(max(schedule.end, schedule.start - (episode // schedule.episodes_per_step) * schedule.step))


# ---------------------------------------------------------------- dynamics providers


class _Stepper:
    """Per-episode dynamics: ``step(setpoint, gain)`` returns the next true state."""

    def __init__(self, pair: ScenarioPair, model: SystemModel, state: SystemState, extra=None):
        self.pair, self.model, self.state, self.extra = pair, model, state, extra

    def step(self, setpoint, gain: float) -> SystemState:
        self.state = self.pair.tick(self.model, self.state, setpoint, self.extra, gain)
        return self.state


class _HybridStepper:
    def __init__(self, pair: ScenarioPair, hybrid: HybridModel, index: int, state: SystemState):
        self.rollout = HybridRollout(pair, hybrid, index, state)

    @property
    def state(self) -> SystemState:
        return self.rollout.state

    def step(self, setpoint, gain: float) -> SystemState:
        return self.rollout.step(setpoint, gain)


class _RandomForceStepper:
    """Ornstein-Uhlenbeck force, squashed into the limits, resampled per episode."""

    def __init__(self, pair: ScenarioPair, model: SystemModel, limits: np.ndarray, tau: float,
                 state: SystemState, rng: np.random.Generator, log_to: list | None = None):
        self.pair, self.model, self.state = pair, model, state
        self.limits = limits
        self.decay = math.exp(-pair.control_period / tau)
        self.rng = rng
        self.z = rng.standard_normal(limits.shape)
        self.log_to = log_to

    def step(self, setpoint, gain: float) -> SystemState:
        force = self.limits * np.tanh(self.z)
        if self.log_to is not None:
            self.log_to.append(force.copy())
        self.state = self.pair.tick(self.model, self.state, setpoint, force, gain)
        self.z = self.decay * self.z + math.sqrt(1 - self.decay ** 2) * self.rng.standard_normal(self.z.shape)
        return self.state


@dataclass(eq=False)
class RandomForceModel:
    """Base model plus temporally correlated random generalised forces."""

    base: SystemModel
    limits: ForceLimits | None
    correlation_time: float = 0.25
    force_log: list | None = None

    @property
    def spec(self):
        return self.base.spec


def random_force_baseline(base: SystemModel, limits: ForceLimits | None, correlation_time: float = 0.25) -> RandomForceModel:
    if correlation_time <= 0:
        raise ContractViolation("correlation time must be > 0")
    return RandomForceModel(base, limits, correlation_time)


def start_episode(pair: ScenarioPair, model, state: SystemState, episode_seed: int):
    """Build the per-episode stepper for a plain, hybrid or random-force model."""
    if isinstance(model, HybridModel):
        idx = ensemble_select(model, episode_seed) if model.gfms else None
        return _HybridStepper(pair, model, idx, state)
    if isinstance(model, RandomForceModel):
        if model.limits is None:
            return _Stepper(pair, model.base, state)
        rng = np.random.default_rng([int(episode_seed), 4243])
        return _RandomForceStepper(pair, model.base, model.limits.vector(model.spec), model.correlation_time,
                                   state, rng, model.force_log)
    if isinstance(model, SystemModel):
        return _Stepper(pair, model, state)
    raise ContractViolation(f"unsupported model type {type(model).__name__}")


# ---------------------------------------------------------------- task environment


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


class TaskEnvironment:
    """Pusher target-matching environment over any dynamics provider.

    Observation frames hold the estimated joint angles and rates, the object
    pose (heading as cos/sin), the target, and the paddle-to-object and
    object-to-target offsets; the last ``history`` frames are
    stacked oldest first. Actions pass through ``tanh`` and are scaled to
    the configured fraction of the joint velocity range, then multiplied by
    the curriculum gain.
    """

    def __init__(self, pair: ScenarioPair, model, task: TaskSpec, targets: list[Target] | None = None,
                 gain: float = 1.0, seed: int = 0, observation_noise: bool = True):
        if not pair.spec.free_bodies:
            raise ConfigurationError(f"scenario {pair.name!r} has no object to push")
        if task.is_pose != (pair.spec.free_bodies[0] == "spatial") and task.is_pose:
            raise ConfigurationError("pose matching needs a spatial object")
        self.pair = pair
        self.model = model
        self.task = task
        self.targets = targets if targets is not None else radial_targets(task, pair)
        self.gain = float(gain)
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.observation_noise = observation_noise
        vel = np.asarray(pair.sim_model.velocity_limits)
        self.action_scale = task.action_fraction * 2.0 * vel
        self.frame_dim = 2 * pair.spec.joint_dim + 8 + (4 if task.is_pose else 2)
        self.observation_dim = task.history * self.frame_dim
        self.action_dim = pair.spec.joint_dim
        self.sigma = 2.0 * task.position_threshold
        self.sigma_heading = 2.0 * task.heading_threshold
        m = pair.sim_model
        self.reach_offset = (max(m.body_half_extents[0][:2]) + m.paddle_radius) if m.body_half_extents else 0.0
        self.fixed_target: int | None = None
        self.episodes = 0
        self._done = True

    # -- bookkeeping
    def _frame(self, x: SystemState) -> np.ndarray:
        spec = self.pair.spec
        n = spec.joint_dim
        h = body_heading(spec, x.q)
        p = body_position(spec, x.q)
        goal = np.asarray(self.target.position)
        tip = tip_position(self.pair.sim_model, x.q)
        parts = [x.q[:n], 0.3 * x.v[:n], 10.0 * p, [np.cos(h), np.sin(h)], 10.0 * goal,
                 10.0 * (p - tip), 10.0 * (goal - p)]
        if self.task.is_pose:
            parts.append([np.cos(self.target.heading), np.sin(self.target.heading)])
        return np.concatenate(parts)

    def _observe(self) -> np.ndarray:
        return np.concatenate(list(self.frames))

    def errors(self, state: SystemState) -> tuple[float, float]:
        spec = self.pair.spec
        d = float(np.linalg.norm(body_position(spec, state.q) - np.asarray(self.target.position)))
        dh = abs(float(_wrap(body_heading(spec, state.q) - self.target.heading)))
        return d, dh

    def push_point(self, state: SystemState) -> np.ndarray:
        """Paddle position behind the object on the far side from the target."""
        p = body_position(self.pair.spec, state.q)
        away = p - np.asarray(self.target.position)
        n = float(np.linalg.norm(away))
        u = away / n if n > 1e-9 else np.array([0.0, -1.0])
        return p + u * self.reach_offset

    def reward(self, state: SystemState) -> float:
        d, dh = self.errors(state)
        r = math.exp(-(d / self.sigma) ** 2)
        if self.task.is_pose:
            r += math.exp(-(dh / self.sigma_heading) ** 2)
        return r

    def potential(self, state: SystemState) -> float:
        """Negative paddle-to-push-point plus object-to-target distance, in thresholds.

        Rewarding ``potential(s') - potential(s)`` pays for progress only, so
        the optimal policy of the task reward is unchanged.
        """
        d, dh = self.errors(state)
        tip = tip_position(self.pair.sim_model, state.q)
        dr = float(np.linalg.norm(tip - self.push_point(state)))
        phi = -(dr + d) / self.task.position_threshold
        if self.task.is_pose:
            phi -= dh / self.task.heading_threshold
        return phi

    @property
    def max_reward(self) -> float:
        """Peak per-tick task reward (excluding the progress term)."""
        return 2.0 if self.task.is_pose else 1.0

    def within_threshold(self, state: SystemState) -> bool:
        d, dh = self.errors(state)
        if self.task.is_pose:
            return d < self.task.position_threshold and dh < self.task.heading_threshold
        return d < self.task.position_threshold

    def in_workspace(self, state: SystemState) -> bool:
        xmin, xmax, ymin, ymax = self.pair.workspace
        tip = tip_position(self.pair.sim_model, state.q)
        return bool(xmin <= tip[0] <= xmax and ymin <= tip[1] <= ymax)

    # -- environment protocol
    def reset(self, target_index: int | None = None, episode_seed: int | None = None) -> np.ndarray:
        if episode_seed is None:
            episode_seed = int(self.rng.integers(2 ** 63))
        idx = target_index if target_index is not None else self.fixed_target
        if idx is None:
            idx = int(self.rng.integers(len(self.targets)))
        self.target = self.targets[idx]
        self.target_index = idx
        ep_rng = np.random.default_rng([episode_seed, 17])
        state = self.pair.initial_state.copy()
        self.stepper = start_episode(self.pair, self.model, state, episode_seed)
        self.estimator = StateEstimator(self.pair, ep_rng) if self.observation_noise else None
        x = self.estimator(state) if self.estimator else state
        self.frames = deque([self._frame(x)] * self.task.history, maxlen=self.task.history)
        self.t = 0
        self.streak = 0
        self.success = False
        self.failed = False
        self._done = False
        self._phi = self.potential(state) if self.task.shaping > 0 else 0.0
        self.episodes += 1
        return self._observe()

    @property
    def done(self) -> bool:
        return self._done

    @property
    def true_state(self) -> SystemState:
        return self.stepper.state

    def setpoint(self, action) -> np.ndarray:
        return np.tanh(np.asarray(action, dtype=float)) * self.action_scale

    def step(self, action):
        if self._done:
            raise ContractViolation("episode finished; call reset()")
        try:
            state = self.stepper.step(self.setpoint(action), self.gain)
        except (DivergenceError, NumericalError):
            self.failed = True
            self._done = True
            return self._observe(), 0.0, True
        self.t += 1
        x = self.estimator(state) if self.estimator else state
        self.frames.append(self._frame(x))
        r = self.reward(state)
        if self.task.shaping > 0:
            phi = self.potential(state)
            r += self.task.shaping * (phi - self._phi)
            self._phi = phi
        self.streak = self.streak + 1 if self.within_threshold(state) else 0
        if self.streak >= self.task.consecutive:
            self.success = True
        terminal = False
        if not self.in_workspace(state):
            self.failed = True
            terminal = True
        if self.t >= self.task.episode_length:
            terminal = True
        self._done = terminal
        return self._observe(), r, terminal


def make_task_environment(pair: ScenarioPair, model, task: TaskSpec, gain: float = 1.0, seed: int = 0,
                          targets: list[Target] | None = None) -> TaskEnvironment:
    return TaskEnvironment(pair, model, task, targets, gain, seed)


# ---------------------------------------------------------------- data collection


def waypoint_reference(pair: ScenarioPair, rng: np.random.Generator, ticks: int, hold: int = 20,
                       amplitude=(0.9, 1.2)) -> np.ndarray:
    """Piecewise-constant joint waypoints around the initial pose, one row per tick."""
    base = pair.initial_state.q[: pair.spec.joint_dim]
    amp = np.asarray(amplitude, dtype=float)[: pair.spec.joint_dim]
    n_wp = -(-ticks // hold)
    wps = base + rng.uniform(-amp, amp, size=(n_wp, pair.spec.joint_dim))
    return np.repeat(wps, hold, axis=0)[:ticks]


class WaypointPolicy:
    """Joint position tracking through velocity setpoints (clipped P control)."""

    def __init__(self, pair: ScenarioPair, ticks: int = 200, hold: int = 20, kp: float = 3.0):
        self.pair, self.ticks, self.hold, self.kp = pair, ticks, hold, kp
        self.limits = np.asarray(pair.sim_model.velocity_limits)

    def begin(self, rng: np.random.Generator) -> None:
        self.reference = waypoint_reference(self.pair, rng, self.ticks, self.hold)

    def __call__(self, t: int, x: SystemState) -> np.ndarray:
        n = self.pair.spec.joint_dim
        return np.clip(self.kp * (self.reference[t] - x.q[:n]), -self.limits, self.limits)


class TaskPolicyRunner:
    """Adapter running a trained task policy as a data-collection controller."""

    def __init__(self, pair: ScenarioPair, policy: GaussianPolicy, task: TaskSpec, ticks: int,
                 deterministic: bool = False):
        self.pair, self.policy, self.task, self.ticks = pair, policy, task, ticks
        self.deterministic = deterministic
        self.env = TaskEnvironment(pair, pair.sim_model, task, observation_noise=False)

    def begin(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self.env.target = self.env.targets[int(rng.integers(len(self.env.targets)))]
        self.frames = None

    def __call__(self, t: int, x: SystemState) -> np.ndarray:
        frame = self.env._frame(x)
        if self.frames is None:
            self.frames = deque([frame] * self.task.history, maxlen=self.task.history)
        else:
            self.frames.append(frame)
        a, _ = self.policy.act(np.concatenate(list(self.frames)), self.rng, self.deterministic)
        return self.env.setpoint(a)


def collect_real_trajectories(pair: ScenarioPair, controller, n: int, seed: int, ticks: int | None = None,
                              model: SystemModel | None = None, hidden_force=None, max_attempts: int | None = None,
                              observation_noise: bool = True) -> TrajectoryDataset:
    """Run ``controller`` on the "real" model and record estimated + clean states.

    ``controller.begin(rng)`` is called per trajectory and
    ``controller(t, estimated_state)`` returns the velocity setpoint.
    ``hidden_force`` adds a constant generalised force to the real side (for
    known-gap experiments). Diverged trajectories are dropped and counted.
    """
    model = pair.real_model if model is None else model
    ticks = ticks if ticks is not None else getattr(controller, "ticks", 200)
    rng = np.random.default_rng([int(seed), 99])
    out: list[Trajectory] = []
    dropped = 0
    max_attempts = max_attempts if max_attempts is not None else 3 * n + 5
    attempts = 0
    spec = pair.spec
    while len(out) < n:
        if attempts >= max_attempts:
            raise NumericalError(f"only {len(out)} of {n} trajectories survived {attempts} attempts")
        attempts += 1
        controller.begin(rng)
        est = StateEstimator(pair, rng) if observation_noise else None
        s = pair.sample_initial_state(rng)
        x = est(s) if est else s.copy()
        qs, vs, dq, dv, acts, rews, times = [x.q], [x.v], [s.q], [s.v], [], [], [s.time]
        try:
            for t in range(ticks):
                a = np.asarray(controller(t, x), dtype=float)
                s = pair.tick(model, s, a, hidden_force, 1.0)
                x = est(s) if est else s.copy()
                qs.append(x.q); vs.append(x.v); dq.append(s.q); dv.append(s.v)
                acts.append(a); rews.append(0.0); times.append(s.time)
        except (DivergenceError, NumericalError) as exc:
            dropped += 1
            log.warning("dropping trajectory: %s", exc)
            continue
        A = np.asarray
        out.append(Trajectory(A(qs), A(vs), A(acts), A(rews), A(times), A(dq), A(dv)))
    for tr in out:
        tr.check(spec)
    return TrajectoryDataset(pair.name, spec, pair.control_rate, int(seed), out, dropped)


def partition_dataset(dataset: TrajectoryDataset, chunk_size: int = 5) -> list[TrajectoryDataset]:
    if chunk_size < 1:
        raise ConfigurationError("chunk size must be >= 1")
    if len(dataset) == 0 or len(dataset) % chunk_size:
        raise ConfigurationError(
            f"dataset of {len(dataset)} trajectories does not split into chunks of {chunk_size}")
    return [dataset.subset(range(i, i + chunk_size)) for i in range(0, len(dataset), chunk_size)]


# ---------------------------------------------------------------- training


@dataclass
class GfmTrainingReport:
    chunk_id: int
    curve: list[EpisodeRecord]
    chunk_error: float
    zero_error: float
    max_force_fraction: float
    mean_force_fraction: float
    flagged: bool = False


def _mean_rollout_error(pair, model, trajectories, weights) -> float:
    from gfmsim.sysid import rollout_error

    return float(np.mean([rollout_error(pair, model, tr, weights).mean for tr in trajectories]))


def train_gfm(pair: ScenarioPair, base: SystemModel, chunk, config: LearnerConfig, episodes: int,
              weights: DistanceWeights, limits: ForceLimits, seed: int, chunk_id: int = 0,
              obs_spec: GfmObservationSpec | None = None, critic_features: bool = True,
              select_every: int = 25) -> tuple[GeneralizedForceModel, GfmTrainingReport]:
    """Train one GFM on a chunk.

    Every ``select_every`` episodes the deterministic GFM is scored by its
    free-rollout error on its own chunk and the best snapshot is kept
    (``0`` keeps the final policy). Held-out data never enters selection.
    """
    env = make_gfm_environment(pair, base, list(chunk), weights, limits, obs_spec, seed, critic_features)
    # start from exactly zero force so the first snapshot reproduces the base model
    init = GaussianPolicy.init(env.policy_observation_dim, env.action_dim, config.actor_hidden,
                               np.random.default_rng([seed, 2]), config.init_std, config.activation, zero_mean=True)
    learner = Learner(env.observation_dim, env.action_dim, config, seed, init, env.policy_observation_dim)
    trajs = list(chunk)

    def snapshot():
        return GeneralizedForceModel(learner.policy.copy(), limits, env.obs_spec, base.spec, chunk_id)

    zero_err = _mean_rollout_error(pair, base, trajs, weights)
    best = snapshot()
    best_err = _mean_rollout_error(pair, HybridModel(base, [best]), trajs, weights)
    curve = []
    for i in range(episodes):
        rec = learner.run_episode(env, i)
        curve.append(rec)
        if select_every and ((i + 1) % select_every == 0 or i + 1 == episodes):
            cand = snapshot()
            err = _mean_rollout_error(pair, HybridModel(base, [cand]), trajs, weights)
            rec.extra["chunk_error"] = err
            if err < best_err:
                best, best_err = cand, err
    if not select_every:
        best = snapshot()
        best_err = _mean_rollout_error(pair, HybridModel(base, [best]), trajs, weights)
    forces = np.asarray(env.force_log) if env.force_log else np.zeros(1)
    report = GfmTrainingReport(chunk_id, curve, best_err, zero_err, float(forces.max()), float(forces.mean()))
    return best, report


def train_gfm_ensemble(pair: ScenarioPair, base: SystemModel, chunks, config: LearnerConfig, episodes: int,
                       weights: DistanceWeights, limits: ForceLimits, seed: int,
                       obs_spec: GfmObservationSpec | None = None, critic_features: bool = True,
                       select_every: int = 25, improvement: float = 0.5) -> tuple[HybridModel, list[GfmTrainingReport]]:
    """One GFM per chunk. Members whose chunk error stays above ``improvement``
    times the zero-GFM error are kept but flagged."""
    if not chunks:
        raise ContractViolation("need at least one dataset chunk")
    gfms, reports = [], []
    for k, chunk in enumerate(chunks):
        gfm, rep = train_gfm(pair, base, chunk, config, episodes, weights, limits, int(seed) * 1000 + k, k,
                             obs_spec, critic_features, select_every)
        if rep.chunk_error > improvement * rep.zero_error:
            rep.flagged = True
            log.warning("GFM %d keeps %.0f%% of the zero-GFM error on its chunk; kept but flagged", k,
                        100 * rep.chunk_error / max(rep.zero_error, 1e-12))
        gfms.append(gfm)
        reports.append(rep)
    return HybridModel(base, gfms), reports


def train_task_policy(pair: ScenarioPair, model, task: TaskSpec, schedule: CurriculumSchedule,
                      config: LearnerConfig, episodes: int | None = None, seed: int = 0,
                      variant: str = "") -> tuple[GaussianPolicy, list[EpisodeRecord]]:
    """Train on ``model`` with a per-episode curriculum gain; curve rows carry the gain."""
    episodes = schedule.total_episodes if episodes is None else episodes
    env = TaskEnvironment(pair, model, task, seed=seed)
    learner = Learner(env.observation_dim, env.action_dim, config, seed)
    curve = []
    for i in range(episodes):
        env.gain = curriculum_gain(i, schedule)
        rec = learner.run_episode(env, i)
        rec.extra = {"gain": env.gain, "variant": variant, "success": int(env.success)}
        curve.append(rec)
        if i % 50 == 0:
            log.info("%s episode %d gain %.0f return %.2f", variant or "task", i, env.gain, rec.ret)
    return learner.policy, curve


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    successes: list[bool]
    final_errors: list[float]
    policy_id: str = ""
    model_id: str = ""
    seed: int = 0
    trials: int = 0
    n_targets: int = 0
    target_indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.successes) != len(self.final_errors):
            raise ContractViolation("one final error per attempt")
        if self.trials and self.n_targets and len(self.successes) != self.trials * self.n_targets:
            raise ContractViolation("attempts must equal trials x targets")

    @property
    def attempts(self) -> int:
        return len(self.successes)

    @property
    def success_count(self) -> int:
        return int(sum(bool(s) for s in self.successes))

    @property
    def success_rate(self) -> float:
        return 100.0 * self.success_count / self.attempts if self.attempts else 0.0

    @property
    def std_dev(self) -> float:
        """Binomial standard deviation of the success percentage."""
        if not self.attempts:
            return 0.0
        p = self.success_count / self.attempts
        return 100.0 * math.sqrt(p * (1 - p) / self.attempts)

    def to_csv(self) -> str:
        lines = ["attempt,target,success,final_error"]
        for i, (s, e) in enumerate(zip(self.successes, self.final_errors)):
            tgt = self.target_indices[i] if self.target_indices else i % max(self.n_targets, 1)
            lines.append(f"{i},{tgt},{int(bool(s))},{e:.9g}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        return (f"policy={self.policy_id} model={self.model_id} seed={self.seed} attempts={self.attempts} "
                f"successes={self.success_count} success={self.success_rate:.1f}% std={self.std_dev:.2f}")


def evaluate(pair: ScenarioPair, policy, task: TaskSpec, trials: int = 5, model=None, seed: int = 0,
             deterministic: bool = True, policy_id: str = "", model_id: str = "real") -> EvalReport:
    """``trials`` attempts per radial target on the real model (by default).

    ``policy`` is a :class:`GaussianPolicy` or a callable
    ``policy(env, observation) -> action`` (used for scripted oracles).
    """
    model = pair.real_model if model is None else model
    env = TaskEnvironment(pair, model, task, seed=seed)
    rng = np.random.default_rng([int(seed), 5])
    successes, errors, idx = [], [], []
    for trial in range(trials):
        for k in range(len(env.targets)):
            obs = env.reset(target_index=k, episode_seed=int(seed) * 100_003 + trial * 1009 + k)
            while not env.done:
                if isinstance(policy, GaussianPolicy):
                    a, _ = policy.act(obs, rng, deterministic=deterministic)
                else:
                    a = policy(env, obs)
                obs, _, _ = env.step(a)
                if env.success:
                    break
            ok = env.success and not (env.failed and not env.success)
            successes.append(bool(ok))
            errors.append(env.errors(env.true_state)[0])
            idx.append(k)
    return EvalReport(successes, errors, policy_id, model_id, int(seed), trials, len(env.targets), idx)
