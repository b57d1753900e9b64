"""Retrace policy-evaluation targets over contiguous episode segments."""
from __future__ import annotations

import numpy as np

from gfmsim.errors import ContractViolation


def retrace(rewards, discounts, q_taken, v_next, traces) -> np.ndarray:
    """Backward Retrace recursion on ``(B, L)`` arrays.

    ``q_taken[t]`` is ``Q(s_t, a_t)``, ``v_next[t]`` is ``E_pi Q(s_{t+1}, .)``,
    ``traces[t]`` is the truncated importance weight ``c_t`` of step ``t``
    and ``discounts[t]`` is ``gamma`` or zero past a terminal::

        G_t = r_t + d_t * (V(s_{t+1}) + c_{t+1} * (G_{t+1} - Q(s_{t+1}, a_{t+1})))

    with the bracketed correction dropped at the last step.
    """
    rewards = np.asarray(rewards, dtype=float)
    squeeze = rewards.ndim == 1
    arrs = [np.atleast_2d(np.asarray(a, dtype=float)) for a in (rewards, discounts, q_taken, v_next, traces)]
    r, d, q, v, c = arrs
    L = r.shape[1]
    out = np.empty_like(r)
    out[:, L - 1] = r[:, L - 1] + d[:, L - 1] * v[:, L - 1]
    for t in range(L - 2, -1, -1):
        out[:, t] = r[:, t] + d[:, t] * (v[:, t] + c[:, t + 1] * (out[:, t + 1] - q[:, t + 1]))
    return out[0] if squeeze else out


def truncated_traces(target_log_prob, behavior_log_prob, lam: float, c_bar: float = 1.0) -> np.ndarray:
    """``c_t = lambda * min(c_bar, pi(a_t|s_t) / mu(a_t|s_t))``."""
    log_ratio = np.asarray(target_log_prob) - np.asarray(behavior_log_prob)
    return lam * np.minimum(c_bar, np.exp(np.minimum(log_ratio, 50.0)))


def check_segment_order(episode_ids, step_indices) -> None:
    ids = np.asarray(episode_ids)
    steps = np.asarray(step_indices)
    if np.any(ids != ids[..., :1]) or np.any(np.diff(steps, axis=-1) != 1):
        raise ContractViolation("segment is not contiguous within one episode")


def retrace_targets(segment, critic, policy, config, rng: np.random.Generator, use_target: bool = True) -> np.ndarray:
    """Per-step Q targets for a :class:`~gfmsim.rl.replay.SegmentBatch`.

    ``E_pi Q(s', .)`` is estimated with ``config.expectation_samples``
    actions drawn from ``policy``. Padded steps get zero traces so the
    recursion stops at the last real transition.
    """
    B, L = segment.rewards.shape
    K = config.expectation_samples
    mu, scale, _, _ = policy.distribution(segment.next_observations.reshape(B * L, -1))
    eps = rng.standard_normal((K, B * L, policy.action_dim))
    acts = mu[None] + scale[None] * eps
    q_next = critic.q_samples(segment.next_observations.reshape(B * L, -1), acts, target=use_target)  # (K, B*L)
    v_next = q_next.mean(axis=0).reshape(B, L)
    q_taken = critic.q(segment.observations, segment.actions, target=use_target)
    pi_lp = policy.log_prob(segment.observations.reshape(B * L, -1), segment.actions.reshape(B * L, -1)).reshape(B, L)
    c = truncated_traces(pi_lp, segment.log_probs, config.retrace_lambda, config.c_bar) * segment.mask
    discounts = config.gamma * (1.0 - segment.terminals)
    return retrace(segment.rewards, discounts, q_taken, v_next, c)
