import numpy as np
import pytest

from uemit.agent import (AdamOptimizer, DuelingQNetwork, Hyperparameters,
                         PrioritizedReplayBuffer, select_action, sync_target,
                         td_target, train_agent, train_step)
from uemit.env import MitigationEnv, ReplayData, Transition
from uemit.features import MitigationPolicyConfig, Normalizer

from conftest import DAY, HOUR, ce, job, make_dataset, ue


def small_net(seed, n_inputs=4, hidden=(8, 6)):
    return DuelingQNetwork(n_inputs=n_inputs, hidden=hidden, seed=seed)


class TestSelectAction:
    def test_full_exploration_is_uniform(self):
        net = small_net(0)
        rng = np.random.default_rng(1)
        state = np.zeros(4)
        draws = [select_action(net, state, 1.0, rng) for _ in range(10_000)]
        assert np.mean(draws) == pytest.approx(0.5, abs=0.02)

    def test_greedy_takes_argmax(self):
        net = small_net(0)
        rng = np.random.default_rng(1)
        found = {0: False, 1: False}
        for trial in range(200):
            state = np.random.default_rng(trial).normal(size=4) * 3
            q = net.forward(state)
            a = select_action(net, state, 0.0, rng)
            assert a == (1 if q[1] > q[0] else 0)
            found[a] = True
            if all(found.values()):
                break
        assert all(found.values())

    def test_tie_prefers_no_mitigation(self):
        net = small_net(0)
        net.set_flat(np.zeros_like(net.flat))  # all Q equal
        rng = np.random.default_rng(1)
        assert select_action(net, np.ones(4), 0.0, rng) == 0

    def test_epsilon_bounds(self):
        net = small_net(0)
        with pytest.raises(ValueError):
            select_action(net, np.zeros(4), 1.5, np.random.default_rng(0))


class TestTdTarget:
    def test_terminal_returns_reward(self):
        online, target = small_net(1), small_net(2)
        tr = Transition(np.zeros(4), 1, -5.0, None, True)
        assert td_target(online, target, tr, 0.97) == -5.0

    def test_gamma_zero_returns_reward(self):
        online, target = small_net(1), small_net(2)
        tr = Transition(np.zeros(4), 0, -1.5, np.ones(4), False)
        assert td_target(online, target, tr, 0.0) == pytest.approx(-1.5)

    def test_double_q_hand_computed(self):
        online, target = small_net(1), small_net(2)
        nxt = np.array([0.3, -0.2, 0.9, 0.1])
        q_online = online.forward(nxt)
        best = 1 if q_online[1] > q_online[0] else 0
        q_target = target.forward(nxt)
        tr = Transition(np.zeros(4), 0, -2.0, nxt, False)
        assert td_target(online, target, tr, 0.9) \
            == pytest.approx(-2.0 + 0.9 * q_target[best])

    def test_argmax_invariant_to_constant_shift(self):
        # double-Q property: shifting all online Q values at s' leaves the
        # evaluated action unchanged
        online, target = small_net(1), small_net(2)
        nxt = np.random.default_rng(3).normal(size=4)
        tr = Transition(np.zeros(4), 0, -1.0, nxt, False)
        base = td_target(online, target, tr, 0.9)
        trunk, wv, bv, wa, ba = online._split_params()
        bv += 123.0  # shifts V(s), hence all Q(s, a), by the same constant
        assert td_target(online, target, tr, 0.9) == pytest.approx(base)


def filled_buffer(net, n=64, seed=0, state_dim=4):
    rng = np.random.default_rng(seed)
    buf = PrioritizedReplayBuffer(128, alpha=0.6, state_dim=state_dim)
    for i in range(n):
        s = rng.normal(size=state_dim)
        a = int(rng.integers(2))
        r = -float(rng.random())
        terminal = rng.random() < 0.2
        nxt = None if terminal else rng.normal(size=state_dim)
        buf.add(Transition(s, a, r, nxt, terminal))
    return buf


class TestTrainStep:
    def test_insufficient_buffer_is_noop(self):
        net = small_net(1)
        buf = PrioritizedReplayBuffer(16, state_dim=4)
        buf.add(Transition(np.zeros(4), 0, 0.0, None, True))
        opt = AdamOptimizer([net.flat], 1e-3)
        hp = Hyperparameters(batch_size=8, buffer_capacity=16, hidden=(8, 6))
        before = net.get_flat()
        assert train_step(buf, net, net.clone(), hp, np.random.default_rng(0), opt) is None
        np.testing.assert_array_equal(before, net.get_flat())

    def test_matching_targets_leave_parameters(self):
        # a zero network predicts 0 for everything; terminal transitions
        # with zero reward therefore already match their targets exactly
        net = small_net(3)
        net.set_flat(np.zeros_like(net.flat))
        buf = PrioritizedReplayBuffer(64, state_dim=4)
        rng = np.random.default_rng(5)
        for _ in range(32):
            buf.add(Transition(rng.normal(size=4), int(rng.integers(2)),
                               0.0, None, True))
        opt = AdamOptimizer([net.flat], 1e-2)
        hp = Hyperparameters(batch_size=16, buffer_capacity=64, hidden=(8, 6))
        loss = train_step(buf, net, net.clone(), hp, np.random.default_rng(1), opt)
        assert loss == 0.0
        np.testing.assert_array_equal(net.get_flat(), 0.0)

    def test_single_transition_regression_converges(self):
        # frozen target: repeated steps drive Q(s, a) to the target
        net = small_net(7)
        target_net = net.clone()
        s = np.array([0.5, -1.0, 0.25, 2.0])
        buf = PrioritizedReplayBuffer(4, state_dim=4)
        buf.add(Transition(s, 1, -3.0, None, True))
        opt = AdamOptimizer([net.flat], 5e-3)
        hp = Hyperparameters(batch_size=1, buffer_capacity=4, hidden=(8, 6),
                             learning_rate=5e-3)
        rng = np.random.default_rng(2)
        for _ in range(3000):
            train_step(buf, net, target_net, hp, rng, opt)
        assert net.forward(s)[1] == pytest.approx(-3.0, abs=1e-3)

    def test_priorities_updated_after_step(self):
        net = small_net(9)
        buf = filled_buffer(net, 32)
        start_priorities = [buf.tree.get(i) for i in range(32)]
        opt = AdamOptimizer([net.flat], 1e-3)
        hp = Hyperparameters(batch_size=32, buffer_capacity=128, hidden=(8, 6))
        train_step(buf, net, net.clone(), hp, np.random.default_rng(0), opt)
        end_priorities = [buf.tree.get(i) for i in range(32)]
        assert start_priorities != end_priorities


def tiny_env(seed=3):
    rng = np.random.default_rng(11)
    events = []
    for node in ("n0", "n1"):
        t = 0
        for _ in range(40):
            t += int(rng.integers(HOUR, 10 * HOUR))
            events.append(ce(t, node=node, count=1 + int(rng.integers(3))))
        events.append(ue(t + HOUR, node=node))
    ds = make_dataset(events, [job("j0", 0, 30.0, 2), job("j1", 0, 60.0, 8)])
    data = ReplayData(ds)
    return MitigationEnv(data, ds.span, ds.jobs, MitigationPolicyConfig(2.0),
                         np.random.default_rng(seed))


class TestTrainAgent:
    def hp(self):
        return Hyperparameters(learning_rate=1e-3, batch_size=8, train_frequency=2,
                               target_sync_frequency=50, buffer_capacity=512,
                               eps_decay_steps=100, hidden=(8, 6))

    def test_zero_episodes_returns_initial_network(self):
        env = tiny_env()
        res = train_agent(env, self.hp(), 0, seed=1)
        assert res.episodes == 0
        assert res.env_steps == 0
        fresh = DuelingQNetwork(
            hidden=(8, 6), dtype=np.dtype(self.hp().dtype),
            seed=int(np.random.default_rng((1, 0)).integers(2 ** 63)))
        np.testing.assert_array_equal(res.network.flat, fresh.flat)

    def test_fixed_seed_reproduces_parameters(self):
        r1 = train_agent(tiny_env(), self.hp(), 12, seed=9)
        r2 = train_agent(tiny_env(), self.hp(), 12, seed=9)
        np.testing.assert_array_equal(r1.network.flat, r2.network.flat)
        assert r1.env_steps == r2.env_steps
        assert r1.episode_rewards == r2.episode_rewards

    def test_different_seed_differs(self):
        r1 = train_agent(tiny_env(), self.hp(), 12, seed=9)
        r2 = train_agent(tiny_env(), self.hp(), 12, seed=10)
        assert not np.array_equal(r1.network.flat, r2.network.flat)

    def test_episode_rewards_match_cost_identity(self):
        res = train_agent(tiny_env(), self.hp(), 12, seed=4)
        assert all(r <= 1e-12 for r in res.episode_rewards)

    def test_warm_start_copies_parameters(self):
        donor = DuelingQNetwork(hidden=(8, 6), seed=77)
        res = train_agent(tiny_env(), self.hp(), 0, seed=1, warm_start=donor)
        np.testing.assert_allclose(res.network.flat,
                                   donor.flat.astype(np.float32), rtol=0)

    def test_max_env_steps_bounds_work(self):
        res = train_agent(tiny_env(), self.hp(), 500, seed=2, max_env_steps=60)
        # the running episode finishes, so allow one episode of overshoot
        assert res.env_steps < 60 + 45
        assert res.episodes < 500
