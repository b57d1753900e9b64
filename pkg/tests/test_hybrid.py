"""GFM observation, bounding, hybrid stepping, the GFM environment and ensembles."""
import math
from collections import deque

import numpy as np
import pytest

from conftest import PLANAR, body_model
from gfmsim.approximator import MLPParams
from gfmsim.distance import DistanceWeights
from gfmsim.dynamics.model import ControlInput, SystemState
from gfmsim.dynamics.scenarios import SCENARIOS, ScenarioPair, make_scenario, one_dof_pair
from gfmsim.errors import ConfigurationError, ContractViolation, CorruptFileError
from gfmsim.config import default_gfm_learner
from gfmsim.harness import collect_real_trajectories, train_gfm
from gfmsim.hybrid import (
    ForceLimits,
    GeneralizedForceModel,
    GfmObservationSpec,
    HybridModel,
    HybridRollout,
    bound_force,
    ensemble_select,
    gfm_observe,
    hybrid_step,
    make_gfm_environment,
)
from gfmsim.rl.networks import GaussianPolicy


class SineController:
    """Open-loop sinusoidal velocity setpoints with a random frequency per trajectory."""

    def __init__(self, ticks=40, amplitude=1.5):
        self.ticks, self.amplitude = ticks, amplitude

    def begin(self, rng):
        self.freq = rng.uniform(1.0, 2.0)

    def __call__(self, t, x):
        return np.array([self.amplitude * math.sin(2 * math.pi * t / self.ticks * self.freq)])


def make_gfm(spec, rng=None, zero=False, limits=ForceLimits(), history=5, const=None):
    obs_spec = GfmObservationSpec.for_spec(spec, history)
    pol = GaussianPolicy.init(obs_spec.dim(spec), spec.v_dim, (8,), rng or np.random.default_rng(0), 0.1)
    if zero or const is not None:
        pol.params.weights[-1][:] = 0.0
        pol.params.biases[-1][: spec.v_dim] = 0.0 if const is None else const
    return GeneralizedForceModel(pol, limits, obs_spec, spec)


# ---------------------------------------------------------------- observation


def test_initial_history_repeats_first_state():
    pair = make_scenario("reacher-joint")
    spec = pair.spec
    x0 = pair.initial_state
    os_ = GfmObservationSpec(history=5, include_action=False)
    obs = gfm_observe([x0], x0, None, os_, spec)
    block = np.concatenate([x0.q, x0.v])
    np.testing.assert_array_equal(obs, np.tile(block, 6))


@pytest.mark.parametrize("name", SCENARIOS)
def test_observation_dim_matches_spec(name):
    pair = make_scenario(name)
    os_ = GfmObservationSpec.for_spec(pair.spec)
    x = pair.initial_state
    obs = gfm_observe([x, x], x, np.zeros(pair.spec.joint_dim), os_, pair.spec)
    assert obs.shape == (os_.dim(pair.spec),)
    assert np.array_equal(obs, gfm_observe([x, x], x, np.zeros(pair.spec.joint_dim), os_, pair.spec))


def test_history_is_oldest_first():
    spec = make_scenario("reacher-joint").spec
    states = [SystemState(np.full(2, float(k)), np.zeros(2)) for k in range(8)]
    os_ = GfmObservationSpec(history=3, include_action=False)
    obs = gfm_observe(states[:7], states[7], None, os_, spec).reshape(4, 4)
    np.testing.assert_array_equal(obs[:, 0], [4, 5, 6, 7])


def test_observation_rejects_bad_action():
    pair = make_scenario("reacher-joint")
    with pytest.raises(ContractViolation):
        gfm_observe([], pair.initial_state, np.zeros(3), GfmObservationSpec(), pair.spec)


# ---------------------------------------------------------------- bounding


def test_bound_force_limits():
    assert bound_force(0.0, 5.0) == 0.0
    assert abs(bound_force(100.0, 5.0) - 5.0) < 1e-3
    raw = 0.01 * 5.0
    assert abs(bound_force(raw, 5.0) - raw) / raw < 1e-4


def test_limit_vector_layout():
    spec = make_scenario("pusher-pose").spec
    v = ForceLimits(2.0, 0.1, 0.2).vector(spec)
    np.testing.assert_array_equal(v, [2, 2, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2])


# ---------------------------------------------------------------- hybrid stepping


def test_zero_gfm_is_bit_exact_with_base_model():
    pair = make_scenario("pusher-pose", 0)
    hybrid = HybridModel(pair.sim_model, [make_gfm(pair.spec, zero=True)])
    roll = HybridRollout(pair, hybrid, 0, pair.initial_state)
    s = pair.initial_state
    rng = np.random.default_rng(0)
    for _ in range(1000):
        u = rng.uniform(-0.3, 0.3, 2)
        s = pair.tick(pair.sim_model, s, u)
        h = roll.step(u)
        assert h.equals(s)


def test_constant_force_accelerates_unit_mass_linearly():
    m = body_model(PLANAR, mass=1.0, friction_coefficient=0.0)
    pair = ScenarioPair("free", 0, m, m, np.zeros(3), SystemState(np.zeros(3), np.zeros(3)), np.zeros(3),
                        (-1, 1, -1, 1))
    gfm = make_gfm(m.spec, limits=ForceLimits(1.0, 1.0, 1.0), const=np.arctanh(0.4))
    roll = HybridRollout(pair, HybridModel(m, [gfm]), 0, pair.initial_state)
    for k in range(1, 11):
        s = roll.step(np.zeros(0))
        np.testing.assert_allclose(s.v[:2], [0.4 * k * pair.control_period] * 2, rtol=1e-12)


def test_hybrid_step_keeps_state_valid():
    pair = make_scenario("pusher-pose", 0)
    hybrid = HybridModel(pair.sim_model, [make_gfm(pair.spec, np.random.default_rng(1))])
    s = pair.initial_state
    hist = deque([s], maxlen=5)
    rng = np.random.default_rng(2)
    for _ in range(30):
        nxt = hybrid_step(hybrid, 0, s, hist, ControlInput.velocity(rng.uniform(-0.3, 0.3, 2)), pair)
        hist.append(s)
        s = nxt
        s.validate(pair.spec)
    with pytest.raises(ContractViolation):
        hybrid_step(hybrid, 1, s, hist, ControlInput.velocity(np.zeros(2)), pair)


def test_gfm_checks_widths():
    spec = make_scenario("reacher-joint").spec
    pol = GaussianPolicy.init(3, spec.v_dim, (4,))
    with pytest.raises(ContractViolation):
        GeneralizedForceModel(pol, ForceLimits(), GfmObservationSpec.for_spec(spec), spec)


def test_gfm_checkpoint_roundtrip():
    spec = make_scenario("pusher-pose").spec
    g = make_gfm(spec, np.random.default_rng(3))
    g.chunk_id = 2
    h = GeneralizedForceModel.loads(g.dumps())
    assert h.chunk_id == 2 and h.obs_spec == g.obs_spec and h.limits == g.limits and h.spec == spec
    obs = np.random.default_rng(0).normal(size=g.policy.obs_dim)
    assert np.array_equal(g.force(obs), h.force(obs))
    with pytest.raises(CorruptFileError):
        GeneralizedForceModel.loads(g.dumps()[:-3])


# ---------------------------------------------------------------- GFM environment


def one_dof_data(force, n=5, seed=0):
    pair = one_dof_pair()
    ds = collect_real_trajectories(pair, SineController(), n, seed, hidden_force=np.array([force]))
    return pair, list(ds)


def test_zero_gap_zero_action_reward_is_one():
    pair, trajs = one_dof_data(0.0)
    env = make_gfm_environment(pair, pair.sim_model, trajs, DistanceWeights(), ForceLimits(1.0))
    env.reset()
    rewards = []
    while not env.done:
        _, r, _ = env.step(np.zeros(1))
        rewards.append(r)
    assert len(rewards) == len(env.traj)
    np.testing.assert_allclose(rewards, 1.0)
    with pytest.raises(ContractViolation):
        env.step(np.zeros(1))


def test_critic_features_extend_observation():
    pair, trajs = one_dof_data(0.0)
    env = make_gfm_environment(pair, pair.sim_model, trajs, DistanceWeights(), ForceLimits(1.0),
                               critic_features=True)
    obs = env.reset()
    assert obs.shape == (env.observation_dim,)
    assert env.observation_dim == env.policy_observation_dim + 2 * 2 + 1


def test_grid_sweep_recovers_hidden_force():
    hidden, limit = 0.4, 1.0
    pair, trajs = one_dof_data(hidden)
    env = make_gfm_environment(pair, pair.sim_model, trajs, DistanceWeights(5.0, 1.0), ForceLimits(limit))
    grid = np.linspace(-0.9, 0.9, 19)
    returns = []
    for f in grid:
        total = 0.0
        for k in range(len(trajs)):
            env.fixed_index = k
            env.reset()
            while not env.done:
                total += env.step(np.array([np.arctanh(f / limit)]))[1]
        returns.append(total)
    best = grid[int(np.argmax(returns))]
    assert abs(best - hidden) <= (grid[1] - grid[0]) / 2 + 1e-12


def test_untrained_gfm_starts_at_zero_force():
    pair, trajs = one_dof_data(0.4, n=2)
    w = DistanceWeights(5.0, 1.0)
    gfm, rep = train_gfm(pair, pair.sim_model, trajs, default_gfm_learner(), 0, w, ForceLimits(1.0), seed=3)
    obs = np.random.default_rng(0).normal(size=gfm.policy.obs_dim)
    assert np.all(gfm.force(obs) == 0.0)
    assert rep.chunk_error == rep.zero_error


# ---------------------------------------------------------------- ensembles


def test_single_member_always_zero():
    spec = make_scenario("reacher-joint").spec
    h = HybridModel(make_scenario("reacher-joint").sim_model, [make_gfm(spec)])
    assert {ensemble_select(h, s) for s in range(100)} == {0}


def test_three_members_are_uniform():
    pair = make_scenario("reacher-joint")
    h = HybridModel(pair.sim_model, [make_gfm(pair.spec) for _ in range(3)])
    counts = np.bincount([ensemble_select(h, s) for s in range(9999)], minlength=3) / 9999
    assert np.all((counts >= 0.30) & (counts <= 0.37))
    assert ensemble_select(h, 42) == ensemble_select(h, 42)


def test_empty_ensemble_is_an_error():
    pair = make_scenario("reacher-joint")
    with pytest.raises(ConfigurationError):
        ensemble_select(HybridModel(pair.sim_model, []), 0)


def test_spec_mismatch_rejected():
    pair = make_scenario("reacher-joint")
    other = make_scenario("pusher-position").spec
    with pytest.raises(ContractViolation):
        HybridModel(pair.sim_model, [make_gfm(other)])
