"""Gaussian policy and Q critic built on :mod:`gfmsim.approximator`."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gfmsim.errors import ContractViolation
from gfmsim.approximator import (
    ACTIVATIONS,
    GaussianHead,
    MLPParams,
    inverse_softplus,
    log_prob,
    mlp_backward,
    mlp_forward,
    softplus_grad,
    split_head,
)


@dataclass
class GaussianPolicy:
    """MLP mapping observations to a diagonal Gaussian over actions."""

    params: MLPParams
    action_dim: int

    @classmethod
    def init(cls, obs_dim: int, action_dim: int, hidden=(64, 64), rng=None, init_std: float = 0.5,
             activation: str = "elu", zero_mean: bool = False) -> "GaussianPolicy":
        """``zero_mean`` zeroes the mean head so the initial mean is exactly 0 everywhere."""
        rng = rng if rng is not None else np.random.default_rng(0)
        params = MLPParams.init((obs_dim, *hidden, 2 * action_dim), rng, activation)
        params.biases[-1][action_dim:] = inverse_softplus(init_std)
        if zero_mean:
            params.weights[-1][:, :action_dim] = 0.0
        return cls(params, action_dim)

    @property
    def obs_dim(self) -> int:
        return self.params.sizes[0]

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.params.copy(), self.action_dim)

    def distribution(self, obs):
        # wider observations carry critic-only features after the policy block
        obs = np.asarray(obs)
        if obs.shape[-1] > self.obs_dim:
            obs = obs[..., : self.obs_dim]
        out, cache = mlp_forward(self.params, obs)
        mu, scale, raw = split_head(out, self.action_dim)
        return mu, scale, raw, cache

    def head(self, obs) -> GaussianHead:
        mu, scale, _, _ = self.distribution(obs)
        return GaussianHead(mu, scale)

    def act(self, obs, rng: np.random.Generator, deterministic: bool = False):
        """Return ``(action, log_prob)`` at a single observation."""
        mu, scale, _, _ = self.distribution(obs)
        if deterministic:
            a = mu.copy()
        else:
            a = mu + scale * rng.standard_normal(mu.shape)
        return a, float(log_prob(mu, scale, a))

    def log_prob(self, obs, actions) -> np.ndarray:
        mu, scale, _, _ = self.distribution(obs)
        return log_prob(mu, scale, actions)

    def backward(self, cache, d_mu, d_scale, raw) -> list[np.ndarray]:
        """Parameter gradients given loss gradients w.r.t. ``mu`` and ``scale``."""
        g = np.concatenate([d_mu, d_scale * softplus_grad(raw)], axis=-1)
        grads, _ = mlp_backward(self.params, cache, g)
        return grads


@dataclass
class Critic:
    """``Q(obs, action)`` network plus a delayed target copy."""

    params: MLPParams
    target: MLPParams
    squash_actions: bool = False

    @classmethod
    def init(cls, obs_dim: int, action_dim: int, hidden=(64, 64), rng=None, activation: str = "elu",
             squash_actions: bool = False) -> "Critic":
        rng = rng if rng is not None else np.random.default_rng(0)
        params = MLPParams.init((obs_dim + action_dim, *hidden, 1), rng, activation, out_scale=1.0)
        return cls(params, params.copy(), squash_actions)

    def copy(self) -> "Critic":
        return Critic(self.params.copy(), self.target.copy(), self.squash_actions)

    def inputs(self, obs, actions) -> np.ndarray:
        """Critic input rows; squashed critics see ``tanh(action)``.

        Squashing keeps the input bounded when the environment saturates
        the action anyway, so Q cannot extrapolate for huge raw actions.
        """
        a = np.tanh(actions) if self.squash_actions else np.asarray(actions)
        x = np.concatenate([obs, a], axis=-1)
        return x.reshape(-1, x.shape[-1])

    @staticmethod
    def evaluate(params: MLPParams, x) -> np.ndarray:
        out, _ = mlp_forward(params, x)
        return out[:, 0]

    def q(self, obs, actions, target: bool = False) -> np.ndarray:
        obs = np.asarray(obs)
        shape = np.broadcast_shapes(obs.shape[:-1], np.shape(actions)[:-1])
        obs = np.broadcast_to(obs, shape + obs.shape[-1:])
        actions = np.broadcast_to(actions, shape + np.shape(actions)[-1:])
        return self.evaluate(self.target if target else self.params, self.inputs(obs, actions)).reshape(shape)

    def q_samples(self, obs, actions, target: bool = False) -> np.ndarray:
        """``Q`` for ``K`` sampled actions per observation: obs ``(B, D)``, actions ``(K, B, A)``.

        The observation part of the first layer is computed once and shared
        by all samples; results equal :meth:`q` on broadcast inputs.
        """
        params = self.target if target else self.params
        obs = np.asarray(obs, dtype=float)
        a = np.tanh(actions) if self.squash_actions else np.asarray(actions, dtype=float)
        if not (np.all(np.isfinite(obs)) and np.all(np.isfinite(a))):
            raise ContractViolation("non-finite network input")
        D = obs.shape[-1]
        if D + a.shape[-1] != params.sizes[0]:
            raise ContractViolation(f"input width {D + a.shape[-1]} != {params.sizes[0]}")
        act, _ = ACTIVATIONS[params.activation]
        W0 = params.weights[0]
        z = (obs @ W0[:D] + params.biases[0])[None] + a @ W0[D:]
        K, B = z.shape[:2]
        h = z.reshape(K * B, -1)
        last = len(params.weights) - 1
        if last > 0:
            h = act(h)
        for i in range(1, last + 1):
            h = h @ params.weights[i] + params.biases[i]
            if i < last:
                h = act(h)
        return h[:, 0].reshape(K, B)

    def sync_target(self) -> None:
        self.target = self.params.copy()
