"""Off-policy learner: replay collection, Retrace critic updates and MPO steps."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol

import numpy as np

from gfmsim.approximator import OptimizerState, mlp_backward, mlp_forward, optimizer_step
from gfmsim.errors import ContractViolation, DivergenceError
from gfmsim.rl.mpo import MPOState, mpo_improve
from gfmsim.rl.networks import Critic, GaussianPolicy
from gfmsim.rl.replay import Episode, ReplayBuffer, Transition
from gfmsim.rl.retrace import retrace_targets

log = logging.getLogger(__name__)


class Environment(Protocol):
    observation_dim: int
    action_dim: int

    def reset(self) -> np.ndarray: ...

    def step(self, action) -> tuple[np.ndarray, float, bool]: ...

    @property
    def done(self) -> bool: ...


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    retrace_lambda: float = 0.95
    c_bar: float = 1.0
    epsilon: float = 0.1
    epsilon_mean: float = 0.05
    epsilon_cov: float = 0.001
    kl_slack: float = 1.5
    alpha_growth: float = 1.5
    action_samples: int = 20
    expectation_samples: int = 8
    target_update_period: int = 100
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "elu"
    policy_lr: float = 3e-4
    critic_lr: float = 3e-4
    batch_size: int = 16
    segment_length: int = 8
    replay_capacity: int = 200_000
    updates_per_step: float = 0.25
    min_replay: int = 256
    init_std: float = 0.5
    mstep_iterations: int = 1
    max_grad_norm: float = 10.0
    squash_actions: bool = False
    policy_hidden: tuple[int, ...] | None = None  # None: same as ``hidden``

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ContractViolation("gamma must lie in (0, 1)")
        if min(self.epsilon, self.epsilon_mean, self.epsilon_cov) <= 0:
            raise ContractViolation("KL bounds must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.policy_hidden is not None:
            object.__setattr__(self, "policy_hidden", tuple(int(h) for h in self.policy_hidden))

    @property
    def actor_hidden(self) -> tuple[int, ...]:
        return self.hidden if self.policy_hidden is None else self.policy_hidden

    def replace(self, **kw) -> "LearnerConfig":
        d = asdict(self)
        d.update(kw)
        return LearnerConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        if self.policy_hidden is not None:
            d["policy_hidden"] = list(self.policy_hidden)
        return d


@dataclass
class CriticUpdate:
    critic: Critic
    loss: float
    skipped: bool = False


def critic_update(buffer: ReplayBuffer, critic: Critic, policy: GaussianPolicy, config: LearnerConfig,
                  optimizer: OptimizerState, rng: np.random.Generator, batch=None) -> CriticUpdate:
    """One gradient step on the squared Retrace error against the target critic."""
    if batch is None:
        if len(buffer) == 0:
            return CriticUpdate(critic, 0.0, skipped=True)
        batch = buffer.sample_segments(config.batch_size, config.segment_length, rng)
    targets = retrace_targets(batch, critic, policy, config, rng)
    x = critic.inputs(batch.observations, batch.actions)
    out, cache = mlp_forward(critic.params, x)
    q = out[:, 0]
    m = batch.mask.ravel()
    err = (q - targets.ravel()) * m
    denom = max(m.sum(), 1.0)
    loss = float(np.sum(err ** 2) / denom)
    grads, _ = mlp_backward(critic.params, cache, (2.0 * err / denom)[:, None])
    new_params = optimizer_step(optimizer, critic.params, grads)
    return CriticUpdate(Critic(new_params, critic.target, critic.squash_actions), loss)


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    length: int
    critic_loss: float
    kl: float
    eta: float
    extra: dict = field(default_factory=dict)


class Learner:
    """Owns the policy, critic, optimisers and replay; the single mutator of parameters."""

    def __init__(self, obs_dim: int, action_dim: int, config: LearnerConfig, seed: int = 0,
                 policy: GaussianPolicy | None = None, policy_obs_dim: int | None = None):
        """``policy_obs_dim < obs_dim`` gives the critic extra trailing features the policy never sees."""
        self.config = config
        self.rng = np.random.default_rng(seed)
        init_rng = np.random.default_rng([seed, 1])
        p_dim = obs_dim if policy_obs_dim is None else policy_obs_dim
        if not 0 < p_dim <= obs_dim:
            raise ContractViolation("policy observation width must lie in (0, obs_dim]")
        self.policy = policy.copy() if policy is not None else GaussianPolicy.init(
            p_dim, action_dim, config.actor_hidden, init_rng, config.init_std, config.activation)
        self.target_policy = self.policy.copy()
        self.critic = Critic.init(obs_dim, action_dim, config.hidden, init_rng, config.activation,
                                  config.squash_actions)
        self.critic_opt = OptimizerState.for_params(self.critic.params, lr=config.critic_lr,
                                                    max_grad_norm=config.max_grad_norm)
        self.mpo = MPOState(optimizer=OptimizerState.for_params(self.policy.params, lr=config.policy_lr,
                                                                max_grad_norm=config.max_grad_norm))
        self.buffer = ReplayBuffer(config.replay_capacity)
        self.updates = 0
        self._update_credit = 0.0

    def update(self) -> tuple[float, float, float]:
        cfg = self.config
        batch = self.buffer.sample_segments(cfg.batch_size, cfg.segment_length, self.rng)
        res = critic_update(self.buffer, self.critic, self.target_policy, cfg, self.critic_opt, self.rng, batch)
        self.critic = res.critic
        obs = batch.observations[batch.mask > 0]
        step = mpo_improve(obs, self.critic, self.policy, cfg, self.mpo, self.rng, reference=self.target_policy)
        self.policy = step.policy
        self.updates += 1
        if self.updates % cfg.target_update_period == 0:
            self.critic.sync_target()
            self.target_policy = self.policy.copy()
        return res.loss, step.kl_total, step.eta

    def run_episode(self, env, episode: int, learn: bool = True, deterministic: bool = False,
                    max_steps: int | None = None) -> EpisodeRecord:
        obs = np.asarray(env.reset(), dtype=float)
        snapshot = self.policy
        transitions: list[Transition] = []
        losses, kls, etas = [], [], []
        ret = 0.0
        t = 0
        while True:
            a, lp = snapshot.act(obs, self.rng, deterministic=deterministic)
            try:
                nxt, r, terminal = env.step(a)
            except DivergenceError as exc:
                raise DivergenceError(f"episode {episode} step {t}: {exc}") from exc
            nxt = np.asarray(nxt, dtype=float)
            transitions.append(Transition(obs, a, float(r), nxt, lp, bool(terminal), episode, t))
            ret += float(r)
            obs = nxt
            t += 1
            if learn and len(self.buffer) >= self.config.min_replay:
                self._update_credit += self.config.updates_per_step
                while self._update_credit >= 1.0:
                    self._update_credit -= 1.0
                    loss, kl, eta = self.update()
                    losses.append(loss)
                    kls.append(kl)
                    etas.append(eta)
                    # workers act with the freshly published snapshot
                    snapshot = self.policy
            if terminal or env.done or (max_steps is not None and t >= max_steps):
                break
        if learn:
            self.buffer.add_episode(Episode.from_transitions(transitions))
        return EpisodeRecord(
            episode, ret, t,
            float(np.mean(losses)) if losses else 0.0,
            float(np.mean(kls)) if kls else 0.0,
            float(np.mean(etas)) if etas else self.mpo.eta,
        )


def train(env, config: LearnerConfig, episodes: int, seed: int = 0, policy: GaussianPolicy | None = None,
          on_episode_start: Callable[[int], dict | None] | None = None,
          callback: Callable[[EpisodeRecord, Learner], None] | None = None) -> tuple[GaussianPolicy, list[EpisodeRecord]]:
    """Interleave rollouts and updates for ``episodes`` episodes.

    ``on_episode_start(i)`` may reconfigure the environment (curriculum
    gain, ensemble member) and return extra columns for the curve.
    """
    learner = Learner(env.observation_dim, env.action_dim, config, seed, policy,
                      getattr(env, "policy_observation_dim", None))
    curve: list[EpisodeRecord] = []
    for i in range(episodes):
        extra = on_episode_start(i) if on_episode_start is not None else None
        rec = learner.run_episode(env, i)
        rec.extra = dict(extra or {})
        curve.append(rec)
        if callback is not None:
            callback(rec, learner)
        if i % 50 == 0:
            log.debug("episode %d return %.3f loss %.4f eta %.3f", i, rec.ret, rec.critic_loss, rec.eta)
    return learner.policy, curve
