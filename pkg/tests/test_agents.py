import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klper.agents import DdpgAgent, Td3Agent, clipped_double_q_target, load_agent, save_agent
from klper.errors import ConfigError, DivergenceError, ShapeError
from klper.replay import CandidateBatch


def small_ddpg(seed=0, **kw):
    kw.setdefault("hidden", (16, 16))
    return DdpgAgent(3, 2, action_bound=2.0, rng=np.random.default_rng(seed), **kw)


def small_td3(seed=0, **kw):
    kw.setdefault("hidden", (16, 16))
    return Td3Agent(3, 2, action_bound=2.0, rng=np.random.default_rng(seed),
                    smoothing_rng=np.random.default_rng(seed + 100), **kw)


def random_batch(rng, b=8, m=3, l=2, done=None, rewards=None):
    return CandidateBatch(
        indices=np.arange(b),
        states=rng.normal(size=(b, m)),
        actions=rng.uniform(-2, 2, size=(b, l)),
        rewards=rng.normal(size=b) if rewards is None else rewards,
        next_states=rng.normal(size=(b, m)),
        dones=np.zeros(b) if done is None else done,
    )


def snapshot(net):
    return [p.copy() for p in net.params]


def unchanged(net, snap):
    return all(np.array_equal(p, q) for p, q in zip(net.params, snap))


@pytest.mark.parametrize("make", [small_ddpg, small_td3])
def test_targets_start_as_exact_copies(make):
    agent = make()
    nets = agent.networks()
    for name, net in nets.items():
        if name.endswith("_target"):
            online = nets[name[: -len("_target")]]
            assert all(a.tobytes() == b.tobytes() for a, b in zip(net.params, online.params))


def test_td3_critics_independent():
    agent = small_td3()
    assert agent.critic1.sizes == agent.critic2.sizes
    assert not np.array_equal(agent.critic1.weights[0], agent.critic2.weights[0])


def test_act_deterministic_and_zero_noise():
    agent = small_ddpg(expl_noise=0.0)
    s = np.array([0.3, -0.2, 1.0])
    a1 = agent.act(s)
    assert np.array_equal(a1, agent.act(s))
    assert np.array_equal(agent.act(s, explore=True, rng=np.random.default_rng(0)), a1)
    with pytest.raises(ShapeError):
        agent.act(np.zeros(4))


def test_act_noise_moments():
    agent = small_ddpg(expl_noise=0.1)
    s = np.array([0.3, -0.2, 1.0])
    base = agent.act(s)
    rng = np.random.default_rng(4)
    draws = np.array([agent.act(s, explore=True, rng=rng) for _ in range(10**5)]) - base
    assert np.all(np.abs(base) < 1.0)  # far from the +-2 bound, so clipping is inactive
    se = 0.1 / np.sqrt(10**5)
    assert np.all(np.abs(draws.mean(axis=0)) <= 3 * se)
    assert np.all(np.abs(draws.std(axis=0) / 0.1 - 1.0) <= 0.02)


def test_act_clips_to_bound():
    agent = small_ddpg(expl_noise=50.0)
    a = agent.act(np.zeros(3), explore=True, rng=np.random.default_rng(0))
    assert np.all(np.abs(a) <= 2.0)


def test_ddpg_terminal_zero_reward_fixed_point():
    agent = small_ddpg()
    for net in (agent.critic, agent.critic_target):
        for p in net.params:
            p[...] = 0.0
    rng = np.random.default_rng(1)
    batch = random_batch(rng, done=np.ones(8), rewards=np.zeros(8))
    y = agent.critic_targets(batch)
    assert not y.any()
    q = agent.q_value(agent.critic, batch.states, batch.actions)
    agent.critic.forward(np.concatenate([batch.states, batch.actions], axis=1))
    grads, _ = agent.critic.backward((2.0 / 8) * (q - y)[:, None])
    assert all(not g.any() for g in grads)
    before = snapshot(agent.critic)
    info = agent.update(batch)
    assert info["critic_loss"] == 0.0
    assert unchanged(agent.critic, before)


def test_constant_critic_gives_zero_actor_gradient():
    agent = small_ddpg()
    for p in agent.critic.params:
        p[...] = 0.0
    agent.critic.biases[-1][...] = 3.0
    states = np.random.default_rng(2).normal(size=(8, 3))
    actions = agent.policy(states)
    agent.critic.forward(np.concatenate([states, actions], axis=1))
    _, g_in = agent.critic.backward(np.full((8, 1), -1 / 8), need_param_grads=False)
    assert not g_in[:, 3:].any()


def test_ddpg_critic_descent_on_single_transition():
    agent = small_ddpg(critic_lr=1e-4)
    batch = random_batch(np.random.default_rng(3), b=1)

    def loss():
        y = agent.critic_targets(batch)
        q = agent.q_value(agent.critic, batch.states, batch.actions)
        return float(np.mean((q - y) ** 2))

    before = loss()
    agent.update(batch)
    assert loss() < before


def test_actor_step_leaves_critic_alone_and_vice_versa():
    agent = small_ddpg()
    batch = random_batch(np.random.default_rng(4))
    critic_before = snapshot(agent.critic)
    agent._actor_step(agent.critic, batch.states)
    assert unchanged(agent.critic, critic_before)
    actor_before = snapshot(agent.actor)
    agent._critic_step(agent.critic, agent.critic_opt, batch, agent.critic_targets(batch))
    assert unchanged(agent.actor, actor_before)


def test_td3_worked_target():
    assert clipped_double_q_target(1.0, 0.99, 2.0, 3.0, 0.0) == pytest.approx(2.98, abs=1e-15)


def test_clipped_double_q_target_cases():
    assert clipped_double_q_target(1.5, 0.99, 7.0, -3.0, 1.0) == 1.5
    assert clipped_double_q_target(1.0, 0.5, 4.0, 4.0, 0.0) == 3.0


@settings(max_examples=200, deadline=None)
@given(st.floats(-100, 100), st.floats(0, 0.999), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.sampled_from([0.0, 1.0]))
def test_clipped_double_q_dominance(r, gamma, q1, q2, done):
    y = clipped_double_q_target(r, gamma, q1, q2, done)
    assert y <= r + gamma * q1 * (1 - done)
    assert y <= r + gamma * q2 * (1 - done)


def test_td3_equal_twins_match_ddpg_target():
    rng = np.random.default_rng(5)
    ddpg = small_ddpg(1)
    td3 = small_td3(2, policy_noise=0.0, policy_delay=1)
    td3.actor_target.load_params(ddpg.actor_target.params)
    td3.critic1_target.load_params(ddpg.critic_target.params)
    td3.critic2_target.load_params(ddpg.critic_target.params)
    batch = random_batch(rng, done=(rng.random(8) < 0.3).astype(float))
    assert np.array_equal(td3.critic_targets(batch), ddpg.critic_targets(batch))


def test_td3_policy_delay_schedule():
    agent = small_td3(policy_delay=2)
    rng = np.random.default_rng(6)
    for step in range(1, 7):
        actor_before = snapshot(agent.actor)
        target_before = snapshot(agent.actor_target)
        info = agent.update(random_batch(rng), step)
        if step % 2:
            assert unchanged(agent.actor, actor_before) and unchanged(agent.actor_target, target_before)
            assert np.isnan(info["actor_loss"])
        else:
            assert not unchanged(agent.actor, actor_before)
            assert not unchanged(agent.actor_target, target_before)


def test_td3_smoothed_actions_bounded():
    agent = small_td3(policy_noise=5.0, noise_clip=0.5)
    a = agent.smoothed_target_actions(np.random.default_rng(0).normal(size=(100, 3)))
    plain = agent.target_policy(np.random.default_rng(0).normal(size=(100, 3)))
    assert np.all(np.abs(a) <= 2.0)
    assert np.all(np.abs(a - plain) <= 0.5 + 1e-12)


def test_divergence_raises():
    agent = small_ddpg()
    batch = random_batch(np.random.default_rng(7))
    batch.rewards[0] = np.inf
    with pytest.raises(DivergenceError):
        agent.update(batch)


def test_updates_keep_parameters_finite():
    agent = small_td3()
    rng = np.random.default_rng(8)
    for step in range(1, 20):
        agent.update(random_batch(rng), step)
    for net in agent.networks().values():
        assert all(np.isfinite(p).all() for p in net.params)


def test_bad_hyperparameters():
    with pytest.raises(ConfigError):
        small_ddpg(gamma=1.0)
    with pytest.raises(ConfigError):
        small_ddpg(tau=0.0)
    with pytest.raises(ConfigError):
        small_td3(policy_delay=0)


@pytest.mark.parametrize("make", [small_ddpg, small_td3])
def test_checkpoint_round_trip(tmp_path, make):
    agent = make()
    rng = np.random.default_rng(9)
    for step in range(1, 4):
        agent.update(random_batch(rng), step)
    save_agent(agent, tmp_path / "ck", step=123)
    back, manifest = load_agent(tmp_path / "ck")
    assert manifest["step"] == 123 and manifest["algo"] == agent.algo
    assert type(back) is type(agent)
    for name, net in agent.networks().items():
        other = back.networks()[name]
        assert all(a.tobytes() == b.tobytes() for a, b in zip(net.params, other.params))
    s = rng.normal(size=3)
    assert np.array_equal(agent.act(s), back.act(s))
