"""Replay, Retrace, MPO and the learner loop."""
import itertools

import numpy as np
import pytest

from gfmsim.approximator import MLPParams
from gfmsim.errors import ContractViolation
from gfmsim.rl.learner import Learner, LearnerConfig, critic_update, train
from gfmsim.rl.mpo import MPOState, estep_weights, gaussian_kl, mpo_improve, solve_temperature
from gfmsim.rl.networks import Critic, GaussianPolicy
from gfmsim.rl.replay import Episode, ReplayBuffer, SegmentBatch, Transition
from gfmsim.rl.retrace import check_segment_order, retrace, retrace_targets, truncated_traces


# ---------------------------------------------------------------- replay


def make_episode(eid, n, obs_dim=2, terminal=True, rng=None):
    rng = rng or np.random.default_rng(eid)
    obs = rng.normal(size=(n + 1, obs_dim))
    return Episode(eid, obs, rng.normal(size=(n, 1)), rng.normal(size=n), rng.normal(size=n), terminal)


def test_buffer_capacity_is_respected():
    buf = ReplayBuffer(25)
    for i in range(10):
        buf.add_episode(make_episode(i, 7))
        assert len(buf) <= 25
    assert buf.inserted == 70


def test_segments_are_contiguous_and_masked():
    buf = ReplayBuffer(1000)
    buf.add_episode(make_episode(0, 5))
    rng = np.random.default_rng(0)
    batch = buf.sample_segments(16, 8, rng)
    ep = buf.episodes[0]
    for b in range(16):
        m = int(batch.mask[b].sum())
        start = next(i for i in range(5) if np.array_equal(ep.observations[i], batch.observations[b, 0]))
        assert m == min(8, 5 - start)
        np.testing.assert_array_equal(batch.next_observations[b, : m - 1], batch.observations[b, 1:m])
        assert batch.terminals[b].sum() == (1 if start + m == 5 else 0)


def test_episode_requires_contiguous_transitions():
    t0 = Transition(np.zeros(1), np.zeros(1), 0.0, np.ones(1), 0.0, False, 0, 0)
    t1 = Transition(np.ones(1), np.zeros(1), 0.0, np.ones(1), 0.0, True, 0, 2)
    with pytest.raises(ContractViolation):
        Episode.from_transitions([t0, t1])
    with pytest.raises(ContractViolation):
        check_segment_order([[0, 0, 1]], [[0, 1, 2]])


# ---------------------------------------------------------------- retrace


def random_mdp(rng, n_states=5, n_actions=2):
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.normal(size=(n_states, n_actions))
    pi = rng.dirichlet(np.ones(n_actions), size=n_states)
    mu = rng.dirichlet(np.ones(n_actions), size=n_states)
    return P, R, pi, mu


def dp_q(P, R, pi, gamma):
    S, A = R.shape
    # Q = R + gamma P V, V = sum_a pi Q
    M = np.zeros((S * A, S * A))
    for s, a in itertools.product(range(S), range(A)):
        for s2, a2 in itertools.product(range(S), range(A)):
            M[s * A + a, s2 * A + a2] = P[s, a, s2] * pi[s2, a2]
    q = np.linalg.solve(np.eye(S * A) - gamma * M, R.ravel())
    return q.reshape(S, A)


def expected_retrace_operator(Q, P, R, pi, mu, gamma, lam, length):
    """Exact expectation of the segment Retrace target by path enumeration."""
    S, A = R.shape
    V = np.sum(pi * Q, axis=1)
    out = np.zeros_like(Q)
    for s0, a0 in itertools.product(range(S), range(A)):
        total = 0.0
        for path in itertools.product(range(S), range(A), repeat=length - 1):
            states = [s0] + list(path[0::2])
            actions = [a0] + list(path[1::2])
            prob = 1.0
            for t in range(1, length):
                prob *= P[states[t - 1], actions[t - 1], states[t]] * mu[states[t], actions[t]]
            if prob == 0.0:
                continue
            # successor of the last step, integrated analytically
            v_last = P[states[-1], actions[-1]] @ V
            r = np.array([R[s, a] for s, a in zip(states, actions)])
            q_taken = np.array([Q[s, a] for s, a in zip(states, actions)])
            v_next = np.array([V[s] for s in states[1:]] + [v_last])
            c = np.array([lam * min(1.0, pi[s, a] / mu[s, a]) for s, a in zip(states, actions)])
            g = retrace(r, np.full(length, gamma), q_taken, v_next, c)
            total += prob * g[0]
        out[s0, a0] = total
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_retrace_converges_to_dp_q(seed):
    rng = np.random.default_rng(seed)
    P, R, pi, mu = random_mdp(rng)
    gamma = 0.9
    q_star = dp_q(P, R, pi, gamma)
    Q = np.zeros_like(R)
    for _ in range(60):
        Q = expected_retrace_operator(Q, P, R, pi, mu, gamma, 0.95, 3)
    assert np.max(np.abs(Q - q_star)) < 1e-3


def test_lambda_zero_is_one_step_target(rng):
    r, q, v = rng.normal(size=6), rng.normal(size=6), rng.normal(size=6)
    d = np.full(6, 0.9)
    g = retrace(r, d, q, v, np.zeros(6))
    np.testing.assert_allclose(g, r + 0.9 * v)


def constant_critic(obs_dim, act_dim, value, rng):
    c = Critic.init(obs_dim, act_dim, (8,), rng)
    p = c.params
    p.weights[-1][:] = 0.0
    p.biases[-1][:] = value
    return Critic(p, p.copy())


def segment(rng, B=4, L=5, obs_dim=3, act_dim=2, terminal_at=None):
    T = np.zeros((B, L))
    if terminal_at is not None:
        T[:, terminal_at] = 1.0
    return SegmentBatch(rng.normal(size=(B, L, obs_dim)), rng.normal(size=(B, L, act_dim)), rng.normal(size=(B, L)),
                        rng.normal(size=(B, L, obs_dim)), rng.normal(size=(B, L)), T, np.ones((B, L)))


def test_retrace_targets_lambda_zero_and_terminal(rng):
    cfg = LearnerConfig(gamma=0.9, retrace_lambda=0.0)
    critic = constant_critic(3, 2, 2.5, rng)
    pol = GaussianPolicy.init(3, 2, (8,), rng)
    seg = segment(rng, terminal_at=4)
    g = retrace_targets(seg, critic, pol, cfg, rng)
    np.testing.assert_allclose(g[:, :4], seg.rewards[:, :4] + 0.9 * 2.5)
    np.testing.assert_allclose(g[:, 4], seg.rewards[:, 4])


def test_truncated_traces_are_capped():
    c = truncated_traces(np.array([0.0, 5.0, -5.0]), np.zeros(3), 0.9, 1.0)
    np.testing.assert_allclose(c, [0.9, 0.9, 0.9 * np.exp(-5.0)])


def test_critic_update_is_deterministic_and_nonnegative(rng):
    buf = ReplayBuffer(1000)
    for i in range(4):
        buf.add_episode(make_episode(i, 12))
    cfg = LearnerConfig(hidden=(8,))
    outs = []
    for _ in range(2):
        init = np.random.default_rng(7)
        critic = Critic.init(2, 1, (8,), init)
        pol = GaussianPolicy.init(2, 1, (8,), init)
        from gfmsim.approximator import OptimizerState

        res = critic_update(buf, critic, pol, cfg, OptimizerState.for_params(critic.params), np.random.default_rng(3))
        outs.append(res)
        assert res.loss >= 0
    assert np.array_equal(outs[0].critic.params.flat(), outs[1].critic.params.flat())


# ---------------------------------------------------------------- MPO


def test_estep_weights_distribution_and_shift(rng):
    q = rng.normal(size=(6, 20))
    w = estep_weights(q, 0.7)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    np.testing.assert_allclose(estep_weights(q + 123.0, 0.7), w, atol=1e-12)


def test_equal_q_gives_uniform_weights():
    np.testing.assert_allclose(estep_weights(np.full((3, 10), 4.2), 0.5), 0.1)


def test_dominant_action_takes_all_weight():
    q = np.zeros((1, 5))
    q[0, 2] = 100.0
    w = estep_weights(q, 0.1)
    assert w[0, 2] > 1 - 1e-12


def test_temperature_dual_meets_kl_bound(rng):
    q = rng.normal(size=(32, 20)) * 3
    eta, _, ok = solve_temperature(q, 0.1)
    assert ok
    w = estep_weights(q, eta)
    kl = np.mean(np.sum(w * np.log(np.maximum(w * 20, 1e-300)), axis=1))
    assert abs(kl - 0.1) < 0.02


def test_gaussian_kl_zero_for_equal(rng):
    mu, s = rng.normal(size=(4, 2)), rng.uniform(0.1, 1, (4, 2))
    np.testing.assert_allclose(gaussian_kl(mu, s, mu, s), 0.0, atol=1e-15)


def run_bandit(iterations=500, seed=0):
    cfg = LearnerConfig(hidden=(16, 16), policy_lr=1e-2)
    rng = np.random.default_rng(seed)
    pol = GaussianPolicy.init(1, 2, (16, 16), rng, 1.0)
    state = MPOState()
    target = np.array([0.7, -1.2])
    obs = np.ones((32, 1))
    q_fn = lambda o, a: -np.sum((a - target) ** 2, axis=-1)
    for _ in range(iterations):
        pol = mpo_improve(obs, None, pol, cfg, state, rng, q_fn=q_fn).policy
    return pol.head(obs[0]).mu, target


def test_mpo_quadratic_bandit_converges():
    mu, target = run_bandit()
    assert np.max(np.abs(mu - target)) < 0.05


def test_mpo_flat_q_keeps_mean():
    cfg = LearnerConfig(hidden=(8,), policy_lr=1e-3)
    rng = np.random.default_rng(0)
    pol = GaussianPolicy.init(1, 1, (8,), rng, 0.5)
    obs = np.ones((64, 1))
    before = pol.head(obs[0]).mu.copy()
    state = MPOState()
    for _ in range(20):
        pol = mpo_improve(obs, None, pol, cfg, state, rng, q_fn=lambda o, a: np.zeros(a.shape[:-1])).policy
    assert np.max(np.abs(pol.head(obs[0]).mu - before)) < 0.1


def test_mpo_respects_trust_region():
    cfg = LearnerConfig(hidden=(8,), policy_lr=0.5)
    rng = np.random.default_rng(0)
    pol = GaussianPolicy.init(1, 1, (8,), rng, 0.5)
    obs = np.ones((16, 1))
    res = mpo_improve(obs, None, pol, cfg, MPOState(), rng, q_fn=lambda o, a: 100 * a[..., 0])
    assert res.kl_total <= cfg.kl_slack * (cfg.epsilon_mean + cfg.epsilon_cov) + 1e-12


# ---------------------------------------------------------------- learner


class ConstantEnv:
    observation_dim = 1
    action_dim = 1

    def __init__(self, length=20):
        self.length = length

    def reset(self):
        self.t = 0
        return np.ones(1)

    def step(self, action):
        self.t += 1
        return np.ones(1), 1.0, False

    @property
    def done(self):
        return self.t >= self.length


class LQEnv:
    """Scalar ``x' = x + a`` with cost ``x^2 + a^2``, horizon ``T``."""

    observation_dim = 1
    action_dim = 1

    def __init__(self, seed=0, horizon=20):
        self.rng = np.random.default_rng(seed)
        self.horizon = horizon

    def reset(self):
        self.x = self.rng.uniform(-1, 1)
        self.t = 0
        return np.array([self.x])

    def step(self, action):
        a = float(np.clip(action[0], -2, 2))
        r = -(self.x ** 2 + a ** 2)
        self.x = float(np.clip(self.x + a, -3, 3))
        self.t += 1
        return np.array([self.x]), r, False

    @property
    def done(self):
        return self.t >= self.horizon


def lq_optimal_return(horizon):
    """Expected optimal finite-horizon return for x0 ~ U(-1, 1) (Riccati recursion)."""
    p = 0.0
    for _ in range(horizon):
        p = 1.0 + p - p * p / (1.0 + p)
    return -p / 3.0


def test_constant_reward_q_converges_to_geometric_sum():
    cfg = LearnerConfig(gamma=0.9, hidden=(16,), min_replay=100, updates_per_step=1.0, critic_lr=3e-3,
                        target_update_period=20, batch_size=16, segment_length=8)
    env = ConstantEnv()
    learner = Learner(1, 1, cfg, seed=0)
    for i in range(80):
        learner.run_episode(env, i)
    acts = learner.policy.head(np.ones((20, 1))).mu
    q = learner.critic.q(np.ones((20, 1)), acts)
    assert np.all(np.abs(q - 10.0) < 0.1)


def test_lq_control_near_optimal():
    cfg = LearnerConfig(gamma=0.9, hidden=(32, 32), updates_per_step=0.5, min_replay=200, policy_lr=1e-3,
                        critic_lr=1e-3, init_std=0.5)
    policy, _ = train(LQEnv(0), cfg, 300, seed=1)
    learner = Learner(1, 1, cfg, 0, policy)
    env = LQEnv(123)
    ret = np.mean([learner.run_episode(env, 0, learn=False, deterministic=True).ret for _ in range(200)])
    best = lq_optimal_return(20)
    assert ret >= best * 1.1


def test_zero_episodes_returns_initial_policy():
    cfg = LearnerConfig(hidden=(8,))
    init = GaussianPolicy.init(1, 1, (8,), np.random.default_rng(0))
    pol, curve = train(ConstantEnv(), cfg, 0, policy=init)
    assert curve == [] and np.array_equal(pol.params.flat(), init.params.flat())


def test_same_seed_same_curve():
    cfg = LearnerConfig(hidden=(8,), min_replay=20, updates_per_step=0.5)
    a = [r.ret for r in train(LQEnv(0), cfg, 8, seed=4)[1]]
    b = [r.ret for r in train(LQEnv(0), cfg, 8, seed=4)[1]]
    assert a == b


def test_policy_sees_only_its_block():
    pol = GaussianPolicy.init(2, 1, (8,), np.random.default_rng(0))
    x = np.array([0.3, -0.2])
    wide = np.concatenate([x, [5.0, 6.0, 7.0]])
    assert np.array_equal(pol.head(x).mu, pol.head(wide).mu)
    learner = Learner(5, 1, LearnerConfig(hidden=(8,)), policy_obs_dim=2)
    assert learner.policy.obs_dim == 2 and learner.critic.params.sizes[0] == 6


def test_invalid_config():
    with pytest.raises(ContractViolation):
        LearnerConfig(gamma=1.0)
    with pytest.raises(ContractViolation):
        LearnerConfig(epsilon=0.0)
