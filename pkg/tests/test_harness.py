"""Task environment, data collection, curricula, evaluation and random-force baseline."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfmsim.dynamics.scenarios import body_position, make_scenario
from gfmsim.persist import dumps_dataset
from gfmsim.errors import ConfigurationError, ContractViolation
from gfmsim.harness import (
    CurriculumSchedule,
    EvalReport,
    ForceLimits,
    TaskSpec,
    TaskEnvironment,
    WaypointPolicy,
    collect_real_trajectories,
    curriculum_gain,
    evaluate,
    partition_dataset,
    radial_targets,
    random_force_baseline,
    start_episode,
)


@pytest.fixture(scope="module")
def pusher():
    return make_scenario("pusher-position", 0)


@pytest.fixture(scope="module")
def reacher():
    return make_scenario("reacher-joint", 0)


def place_object(env, position, heading=None):
    """Move the object of the current episode to ``position`` at rest."""
    s = env.stepper.state
    _, sq, sv = list(env.pair.spec.body_slices())[0]
    q, v = s.q.copy(), s.v.copy()
    q[sq.start:sq.start + 2] = position
    v[sv] = 0.0
    env.stepper.state = s.replace(q=q, v=v)


# ---------------------------------------------------------------- task environment


def test_reward_peaks_at_target(pusher):
    env = TaskEnvironment(pusher, pusher.sim_model, TaskSpec.position(), observation_noise=False)
    env.reset(target_index=0)
    tgt = np.asarray(env.target.position)
    place_object(env, tgt)
    assert env.reward(env.true_state) == pytest.approx(1.0)
    place_object(env, tgt + [env.sigma, 0.0])
    assert env.reward(env.true_state) == pytest.approx(math.exp(-1.0))


def test_progress_shaping_telescopes(pusher):
    def episode(shaping):
        env = TaskEnvironment(pusher, pusher.sim_model, TaskSpec.position(episode_length=60, shaping=shaping))
        env.reset(target_index=3, episode_seed=5)
        phi0 = env.potential(env.true_state)
        rng = np.random.default_rng(2)
        total = 0.0
        while not env.done:
            total += env.step(rng.uniform(-2, 2, 2))[1]
        return total, env.potential(env.true_state) - phi0

    plain, _ = episode(0.0)
    shaped, gain = episode(2.0)
    assert shaped == pytest.approx(plain + 2.0 * gain, abs=1e-9)
    with pytest.raises(ConfigurationError):
        TaskSpec.position(shaping=-1.0)


def test_observation_layout(pusher):
    task = TaskSpec.position(history=4)
    env = TaskEnvironment(pusher, pusher.sim_model, task)
    obs = env.reset()
    assert obs.shape == (env.observation_dim,) == (4 * env.frame_dim,)
    assert env.frame_dim == 14
    frames = obs.reshape(4, -1)
    assert np.all(frames == frames[0])


def test_episode_ends_on_length(pusher):
    task = TaskSpec.position(episode_length=15, consecutive=5)
    env = TaskEnvironment(pusher, pusher.sim_model, task)
    env.reset()
    n = 0
    while not env.done:
        env.step(np.zeros(2))
        n += 1
    assert n == 15
    with pytest.raises(ContractViolation):
        env.step(np.zeros(2))


def test_leaving_workspace_terminates(pusher):
    env = TaskEnvironment(pusher, pusher.sim_model, TaskSpec.position(episode_length=400))
    env.reset()
    n = 0
    while not env.done:
        env.step(np.array([10.0, 10.0]))
        n += 1
    assert env.failed and n < 400


def test_environment_requires_object(reacher, pusher):
    with pytest.raises(ConfigurationError):
        TaskEnvironment(reacher, reacher.sim_model, TaskSpec.position())
    with pytest.raises(ConfigurationError):
        TaskEnvironment(pusher, pusher.sim_model, TaskSpec.pose())


def test_task_spec_validation():
    with pytest.raises(ConfigurationError):
        TaskSpec(task="juggle")
    with pytest.raises(ConfigurationError):
        TaskSpec.position(position_threshold=0.0)
    with pytest.raises(ConfigurationError):
        TaskSpec.position(episode_length=5, consecutive=10)


def test_radial_targets():
    task = TaskSpec.position(n_targets=8, target_radius=0.05)
    ts = radial_targets(task)
    assert len(ts) == 8
    for k, t in enumerate(ts):
        assert np.hypot(*t.position) == pytest.approx(0.05)
        assert math.atan2(t.position[1], t.position[0]) % (2 * math.pi) == pytest.approx(2 * math.pi * k / 8)
    pose = radial_targets(TaskSpec.pose(n_targets=4))
    assert len({t.heading for t in pose}) == 4
    with pytest.raises(ConfigurationError):
        radial_targets(task, n=0)


def test_radial_targets_must_fit_tray(pusher):
    with pytest.raises(ConfigurationError):
        radial_targets(TaskSpec.position(target_radius=0.5), pusher)


# ---------------------------------------------------------------- data collection


def test_collect_counts_and_determinism(reacher):
    ctl = WaypointPolicy(reacher, ticks=30)
    a = collect_real_trajectories(reacher, ctl, 3, 7)
    b = collect_real_trajectories(reacher, ctl, 3, 7)
    c = collect_real_trajectories(reacher, ctl, 3, 8)
    assert len(a) == 3 and all(len(tr) == 30 for tr in a)
    assert dumps_dataset(a) == dumps_dataset(b)
    assert dumps_dataset(a) != dumps_dataset(c)


def test_noise_free_collection_stores_true_states(reacher):
    ds = collect_real_trajectories(reacher, WaypointPolicy(reacher, ticks=20), 1, 0, observation_noise=False)
    tr = ds[0]
    for t in range(len(tr) + 1):
        assert tr.state(t).equals(tr.state(t, diagnostic=True))


@pytest.mark.parametrize("n,chunks", [(10, 2), (5, 1), (15, 3)])
def test_partition(reacher, n, chunks):
    ds = collect_real_trajectories(reacher, WaypointPolicy(reacher, ticks=3), n, 0)
    parts = partition_dataset(ds)
    assert len(parts) == chunks and all(len(p) == 5 for p in parts)


def test_partition_rejects_remainder(reacher):
    ds = collect_real_trajectories(reacher, WaypointPolicy(reacher, ticks=3), 7, 0)
    with pytest.raises(ConfigurationError):
        partition_dataset(ds)


# ---------------------------------------------------------------- curriculum


def test_curriculum_values():
    sched = CurriculumSchedule(episodes_per_step=1000)
    assert curriculum_gain(0, sched) == 6.0
    assert curriculum_gain(1000, sched) == 5.0
    assert curriculum_gain(5999, sched) == 1.0
    assert curriculum_gain(10 ** 6, sched) == 1.0
    assert sched.total_episodes == 6000
    assert CurriculumSchedule.fixed().total_episodes == 1
    with pytest.raises(ContractViolation):
        curriculum_gain(-1, sched)
    with pytest.raises(ConfigurationError):
        CurriculumSchedule(start=0.5, end=1.0)


@given(st.integers(0, 20_000), st.integers(1, 2000))
@settings(max_examples=200, deadline=None)
def test_curriculum_monotone_and_bounded(ep, per_step):
    sched = CurriculumSchedule(episodes_per_step=per_step)
    g = curriculum_gain(ep, sched)
    assert 1.0 <= g <= 6.0
    assert curriculum_gain(ep + 1, sched) <= g


# ---------------------------------------------------------------- evaluation


def test_report_accounting():
    succ = [True] * 42 + [False] * 8
    rep = EvalReport(succ, [0.0] * 50, trials=5, n_targets=10)
    assert rep.success_rate == pytest.approx(84.0)
    assert rep.std_dev == pytest.approx(100 * math.sqrt(0.84 * 0.16 / 50))
    assert rep.to_csv().count("\n") == 51
    with pytest.raises(ContractViolation):
        EvalReport(succ, [0.0] * 49)
    with pytest.raises(ContractViolation):
        EvalReport(succ[:40], [0.0] * 40, trials=5, n_targets=10)


def test_teleport_oracle_always_succeeds(pusher):
    task = TaskSpec.position(episode_length=40)

    def oracle(env, obs):
        place_object(env, env.target.position)
        return np.zeros(2)

    rep = evaluate(pusher, oracle, task, trials=1, model=pusher.sim_model)
    assert rep.attempts == 10 and rep.success_rate == 100.0


def test_random_policy_rarely_succeeds(pusher):
    rng = np.random.default_rng(0)
    rep = evaluate(pusher, lambda env, obs: rng.normal(size=2), TaskSpec.position(episode_length=150), trials=2)
    assert rep.attempts == 20
    assert rep.success_rate < 20.0


def test_evaluate_is_deterministic(pusher):
    rng = [np.random.default_rng(1), np.random.default_rng(1)]
    task = TaskSpec.position(episode_length=20)
    a = evaluate(pusher, lambda env, obs: rng[0].normal(size=2), task, trials=1, seed=3)
    b = evaluate(pusher, lambda env, obs: rng[1].normal(size=2), task, trials=1, seed=3)
    assert a.to_csv() == b.to_csv() and a.summary() == b.summary()


# ---------------------------------------------------------------- random-force baseline


def run_random_force(pair, limits, seed, ticks=20):
    rf = random_force_baseline(pair.sim_model, limits)
    rf.force_log = []
    stepper = start_episode(pair, rf, pair.initial_state.copy(), seed)
    for _ in range(ticks):
        stepper.step(np.zeros(2), 1.0)
    return stepper.state, np.array(rf.force_log)


def test_random_force_respects_limits(pusher):
    lim = ForceLimits(0.5, 0.02, 0.01)
    _, forces = run_random_force(pusher, lim, 0)
    bound = lim.vector(pusher.spec)
    assert forces.shape == (20, pusher.spec.v_dim)
    assert np.all(np.abs(forces) <= bound)
    assert np.any(forces != 0)


def test_vanishing_limits_match_base_model(pusher):
    base = pusher.initial_state.copy()
    for _ in range(20):
        base = pusher.tick(pusher.sim_model, base, np.zeros(2))
    s, forces = run_random_force(pusher, ForceLimits(1e-15, 1e-15, 1e-15), 0)
    assert np.all(np.abs(forces) <= 1e-15)
    np.testing.assert_allclose(s.q, base.q, atol=1e-12)
    s, forces = run_random_force(pusher, None, 0)
    assert forces.size == 0 and s.equals(base)


def test_random_force_seeds_differ(pusher):
    lim = ForceLimits(0.5, 0.02, 0.01)
    _, a = run_random_force(pusher, lim, 0)
    _, b = run_random_force(pusher, lim, 1)
    _, c = run_random_force(pusher, lim, 0)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, c)
    with pytest.raises(ContractViolation):
        random_force_baseline(pusher.sim_model, lim, correlation_time=0.0)
