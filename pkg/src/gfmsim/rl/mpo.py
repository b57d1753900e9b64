"""MPO policy improvement: KL-constrained E-step and trust-region M-step."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from gfmsim.approximator import OptimizerState, optimizer_step
from gfmsim.rl.networks import GaussianPolicy


@dataclass
class MPOState:
    eta: float = 1.0
    alpha_mean: float = 1.0
    alpha_cov: float = 1.0
    dual_failures: int = 0
    backtracks: int = 0
    optimizer: OptimizerState | None = None


def estep_weights(q_values, eta: float) -> np.ndarray:
    """Row-wise ``softmax(Q / eta)`` over the sampled actions of each state."""
    z = np.asarray(q_values, dtype=float) / eta
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def temperature_dual(eta: float, q_values, epsilon: float) -> tuple[float, float]:
    """Dual ``g(eta) = eta*eps + eta*mean_s log mean_k exp(Q/eta)`` and its derivative."""
    q = np.asarray(q_values, dtype=float)
    K = q.shape[-1]
    lse = logsumexp(q / eta, axis=-1) - np.log(K)
    w = estep_weights(q, eta)
    g = eta * epsilon + eta * float(lse.mean())
    dg = epsilon + float(lse.mean()) - float(np.mean(np.sum(w * q, axis=-1))) / eta
    return g, dg


def solve_temperature(q_values, epsilon: float, eta0: float = 1.0) -> tuple[float, float, bool]:
    """Minimise the temperature dual over ``eta > 0``; returns ``(eta, dual, converged)``."""
    def fun(x):
        g, dg = temperature_dual(float(np.exp(x[0])), q_values, epsilon)
        return g, np.array([dg * np.exp(x[0])])

    x0 = np.array([np.log(max(eta0, 1e-8))])
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=[(np.log(1e-8), np.log(1e8))])
    eta = float(np.exp(res.x[0]))
    ok = bool(res.success) and np.isfinite(res.fun)
    return eta, float(res.fun), ok


def gaussian_kl(mu0, s0, mu1, s1) -> np.ndarray:
    """``KL(N(mu0, s0^2) || N(mu1, s1^2))`` for diagonal Gaussians, summed over dims."""
    return np.sum(np.log(s1 / s0) + (s0 ** 2 + (mu0 - mu1) ** 2) / (2 * s1 ** 2) - 0.5, axis=-1)


@dataclass
class MStepResult:
    policy: GaussianPolicy
    eta: float
    dual: float
    kl_mean: float
    kl_cov: float
    kl_total: float
    expected_q_weighted: float
    expected_q_uniform: float
    stats: dict = field(default_factory=dict)


def mpo_improve(observations, critic, policy: GaussianPolicy, config, state: MPOState,
                rng: np.random.Generator, q_fn=None, reference: GaussianPolicy | None = None) -> MStepResult:
    """One E-step + M-step on a batch of observations.

    Actions are sampled from ``reference`` (the delayed target policy in the
    learner; ``policy`` itself when omitted) and the trust regions are
    measured against it, so drift is bounded per target period rather than
    per gradient step. ``q_fn(obs_rep, actions)`` overrides the critic
    (used by tests with a known Q function). ``state`` is updated in place.
    """
    obs = np.asarray(observations, dtype=float)
    B = obs.shape[0]
    K = config.action_samples
    reference = policy if reference is None else reference
    mu_o, s_o, _, _ = reference.distribution(obs)
    acts = mu_o[None] + s_o[None] * rng.standard_normal((K, B, policy.action_dim))
    if q_fn is None:
        q = critic.q_samples(obs, acts, target=True)
    else:
        q = q_fn(np.broadcast_to(obs[None], (K, B, obs.shape[-1])), acts)
    q = np.asarray(q).T  # (B, K)

    eta, dual, ok = solve_temperature(q, config.epsilon, state.eta)
    if not ok or not np.isfinite(eta):
        state.dual_failures += 1
        eta = state.eta
        dual = temperature_dual(eta, q, config.epsilon)[0]
    state.eta = eta
    w = estep_weights(q, eta)  # (B, K)
    a_bk = np.transpose(acts, (1, 0, 2))  # (B, K, d)

    if state.optimizer is None:
        state.optimizer = OptimizerState.for_params(policy.params, lr=config.policy_lr)
    old_params = policy.params
    new = policy.copy()
    for _ in range(config.mstep_iterations):
        mu, s, raw, cache = new.distribution(obs)
        diff_mu = a_bk - mu[:, None, :]
        diff_o = a_bk - mu_o[:, None, :]
        # decoupled weighted maximum likelihood: mean with old scale, scale with old mean
        d_mu = -np.sum(w[..., None] * diff_mu, axis=1) / s_o ** 2
        d_s = -np.sum(w[..., None] * (diff_o ** 2 / s[:, None, :] ** 3 - 1.0 / s[:, None, :]), axis=1)
        d_mu += state.alpha_mean * (mu - mu_o) / s_o ** 2
        d_s += state.alpha_cov * (1.0 / s - s_o ** 2 / s ** 3)
        grads = new.backward(cache, d_mu / B, d_s / B, raw)
        new = GaussianPolicy(optimizer_step(state.optimizer, new.params, grads), policy.action_dim)

    mu_n, s_n, _, _ = new.distribution(obs)
    kl_total = float(np.mean(gaussian_kl(mu_o, s_o, mu_n, s_n)))
    bound = config.kl_slack * (config.epsilon_mean + config.epsilon_cov)
    if kl_total > bound:
        # pull back toward the current parameters until the trust region holds
        flat_old = old_params.flat()
        flat_new = new.params.flat()
        beta = 1.0
        for _ in range(30):
            beta *= 0.5
            state.backtracks += 1
            cand = GaussianPolicy(old_params.from_flat(flat_old + beta * (flat_new - flat_old)), policy.action_dim)
            mu_n, s_n, _, _ = cand.distribution(obs)
            kl_total = float(np.mean(gaussian_kl(mu_o, s_o, mu_n, s_n)))
            if kl_total <= bound:
                break
        new = cand
    kl_mean = float(np.mean(np.sum((mu_n - mu_o) ** 2 / (2 * s_o ** 2), axis=-1)))
    kl_cov = float(np.mean(gaussian_kl(mu_o, s_o, mu_o, s_n)))

    # adaptive penalty coefficients
    for name, kl, eps in (("alpha_mean", kl_mean, config.epsilon_mean), ("alpha_cov", kl_cov, config.epsilon_cov)):
        a = getattr(state, name)
        if kl > eps:
            a *= config.alpha_growth
        elif kl < 0.5 * eps:
            a /= config.alpha_growth
        setattr(state, name, float(np.clip(a, 1e-4, 1e6)))

    return MStepResult(
        policy=new,
        eta=eta,
        dual=float(dual),
        kl_mean=kl_mean,
        kl_cov=kl_cov,
        kl_total=kl_total,
        expected_q_weighted=float(np.mean(np.sum(w * q, axis=1))),
        expected_q_uniform=float(np.mean(q)),
    )
