import numpy as np
import pytest

from dwm_lab.algo.errors import ConfigurationError, TrainingDivergedError
from dwm_lab.rl.ddpg_agent import (AgentBundle, Batch, DdpgHyperparameters, OuNoise, ReplayBuffer, RMSprop, RunningNorm,
                                   clip_gradients, soft_update, td_target, train_step)
from dwm_lab.rl.networks import Mlp


def _bundle(seed: int = 0, **hyper) -> AgentBundle:
    params = {"batch_size": 16, "buffer_size": 1000, **hyper}
    return AgentBundle.create(obs_dim=2, action_dim=1, hidden=16, u_max=0.01, hyper=DdpgHyperparameters(**params),
                              seed=seed)


def _batch(size: int = 16, reward: float = -0.5, done: float = 0.0, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch(obs=rng.standard_normal((size, 2)), action=rng.random((size, 1)), reward=np.full((size, 1), reward),
                 next_obs=rng.standard_normal((size, 2)), done=np.full((size, 1), done))


class TestReplayBuffer:
    def test_ring_overwrites_oldest(self):
        buffer = ReplayBuffer(3, obs_dim=1, action_dim=1)
        for i in range(5):
            buffer.add([i], [0.0], float(i), [i + 1], False)
        assert len(buffer) == 3
        assert buffer.position == 2
        batch = buffer.sample(3, np.random.default_rng(0))
        assert sorted(batch.reward.reshape(-1)) == [2.0, 3.0, 4.0]

    def test_grows_past_the_initial_allocation(self):
        buffer = ReplayBuffer(5000, obs_dim=2, action_dim=1)
        for i in range(4200):
            buffer.add([i, 0], [0.0], 0.0, [0, 0], i % 2 == 0)
        assert len(buffer) == 4200
        assert buffer.state_dict()["buffer/obs"][4199, 0] == 4199

    def test_state_round_trip(self):
        buffer = ReplayBuffer(10, obs_dim=1, action_dim=1)
        for i in range(4):
            buffer.add([i], [0.5], -1.0, [i], True)
        restored = ReplayBuffer(10, obs_dim=1, action_dim=1)
        restored.load_state_dict(buffer.state_dict())
        assert len(restored) == 4 and restored.position == 4
        assert np.array_equal(restored.state_dict()["buffer/obs"], buffer.state_dict()["buffer/obs"])

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            ReplayBuffer(0, 1, 1)
        with pytest.raises(ConfigurationError):
            ReplayBuffer(5, 1, 1).sample(1, np.random.default_rng(0))


class TestOptimizationPieces:
    def test_ou_noise_reverts_to_the_mean(self):
        noise = OuNoise(1, mu=0.0, theta=0.5, sigma=0.0)
        noise.state = np.array([1.0])
        assert noise.sample()[0] == pytest.approx(0.5)
        noise.reset()
        assert noise.state[0] == 0.0

    def test_ou_sigma_decays_per_episode(self):
        noise = OuNoise(1, sigma=0.99, decay=0.995)
        noise.end_episode()
        assert noise.sigma == pytest.approx(0.99 * 0.995)

    def test_clip_gradients(self):
        grads = [np.array([3.0, 4.0])]
        assert clip_gradients(grads, 1.0) == pytest.approx(5.0)
        assert np.allclose(grads[0], [0.6, 0.8])
        small = [np.array([0.1])]
        clip_gradients(small, 1.0)
        assert small[0][0] == 0.1

    def test_rmsprop_first_step(self):
        p = np.array([1.0])
        RMSprop([p], lr=1e-3, rho=0.99, eps=1e-8).step([np.array([1.0])])
        assert p[0] == pytest.approx(0.99, abs=1e-6)

    def test_soft_update(self):
        source = Mlp([2, 3, 1], rng=np.random.default_rng(1))
        target = Mlp([2, 3, 1], rng=np.random.default_rng(2))
        before = [p.copy() for p in target.parameters()]
        soft_update(target, source, 0.5)
        for t, b, s in zip(target.parameters(), before, source.parameters()):
            assert np.allclose(t, 0.5 * (b + s))
        soft_update(target, source, 1.0)
        for t, s in zip(target.parameters(), source.parameters()):
            assert np.allclose(t, s)

    def test_running_norm(self):
        norm = RunningNorm(1)
        assert norm(np.array([5.0]))[0] == 5.0
        norm.update(np.array([1.0]))
        norm.update(np.array([3.0]))
        assert norm.mean[0] == pytest.approx(2.0)
        assert norm(np.array([2.0 + np.sqrt(2.0)]))[0] == pytest.approx(1.0)


class TestAgent:
    def test_same_seed_same_agent(self):
        first, second = _bundle(seed=4), _bundle(seed=4)
        for a, b in zip(first.actor.net.parameters(), second.actor.net.parameters()):
            assert np.array_equal(a, b)
        obs = np.array([0.3, 0.1])
        assert np.array_equal(first.act(obs, explore=True), second.act(obs, explore=True))

    def test_targets_start_as_copies(self):
        bundle = _bundle()
        for a, b in zip(bundle.critic1.net.parameters(), bundle.critic1_target.net.parameters()):
            assert np.array_equal(a, b)
        assert bundle.critic1.net.parameters()[0] is not bundle.critic1_target.net.parameters()[0]

    def test_actions_stay_in_range(self):
        bundle = _bundle()
        for obs in np.random.default_rng(0).standard_normal((20, 2)):
            U = bundle.act(obs, explore=True)
            assert U.shape == (1,)
            assert 0.0 <= U[0] <= bundle.u_max

    def test_terminal_target_is_the_reward(self):
        bundle = _bundle()
        batch = _batch(done=1.0, reward=0.25)
        assert np.allclose(td_target(batch, bundle), 0.25)

    def test_critic_fits_a_constant_reward(self):
        bundle = _bundle(gamma=0.0)
        batch = _batch()
        losses = [train_step(bundle, batch)["critic1"] for _ in range(300)]
        assert losses[-1] < 0.5 * losses[0]

    def test_training_moves_targets_slowly(self):
        bundle = _bundle(tau=0.01)
        before = bundle.actor_target.net.parameters()[0].copy()
        train_step(bundle, _batch())
        moved = np.abs(bundle.actor_target.net.parameters()[0] - before).max()
        online_gap = np.abs(bundle.actor.net.parameters()[0] - before).max()
        assert 0 < moved <= 0.01 * online_gap + 1e-15

    def test_divergence_carries_the_batch(self):
        bundle = _bundle()
        batch = _batch(reward=np.nan)
        with pytest.raises(TrainingDivergedError) as info:
            train_step(bundle, batch)
        assert info.value.batch is batch

    @pytest.mark.parametrize("field", ["reward", "obs"])
    def test_divergence_leaves_the_networks_untouched(self, field):
        bundle = _bundle()
        batch = _batch()
        getattr(batch, field)[0, 0] = np.nan
        networks = ("actor", "critic1", "critic2", "actor_target", "critic1_target", "critic2_target")
        before = {name: [p.copy() for p in getattr(bundle, name).net.parameters()] for name in networks}
        with pytest.raises(TrainingDivergedError):
            train_step(bundle, batch)
        for name in networks:
            for old, new in zip(before[name], getattr(bundle, name).net.parameters()):
                assert np.array_equal(old, new)
