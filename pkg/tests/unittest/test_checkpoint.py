import numpy as np
import pytest

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.rl.checkpoint import load_bundle, load_policy, read_header, save_checkpoint
from dwm_lab.rl.ddpg_agent import AgentBundle, DdpgHyperparameters, train_step


def _bundle(seed: int = 0, hidden: int = 8) -> AgentBundle:
    hyper = DdpgHyperparameters(batch_size=4, buffer_size=100)
    return AgentBundle.create(obs_dim=2, action_dim=1, hidden=hidden, u_max=0.01, hyper=hyper, seed=seed)


def _trained_bundle() -> AgentBundle:
    bundle = _bundle()
    rng = np.random.default_rng(0)
    for _ in range(10):
        bundle.buffer.add(rng.standard_normal(2), rng.random(1), -0.1, rng.standard_normal(2), False)
    train_step(bundle, bundle.buffer.sample(4, bundle.rng))
    bundle.act(np.zeros(2), explore=True)
    return bundle


class TestCheckpoint:
    def test_training_round_trip(self, tmp_path):
        bundle = _trained_bundle()
        path = save_checkpoint(tmp_path / "train.npz", bundle, env_hash="abc", episode=7)
        restored = _bundle(seed=99)
        assert load_bundle(path, restored, env_hash="abc") == 7
        for name in ("actor", "critic1", "critic2_target"):
            for a, b in zip(getattr(bundle, name).net.parameters(), getattr(restored, name).net.parameters()):
                assert np.array_equal(a, b)
        assert np.array_equal(restored.optimizers["actor"].cache[0], bundle.optimizers["actor"].cache[0])
        assert len(restored.buffer) == 10
        assert np.array_equal(restored.noise.state, bundle.noise.state)
        assert restored.rng.random() == bundle.rng.random()
        assert np.array_equal(restored.noise.rng.standard_normal(3), bundle.noise.rng.standard_normal(3))

    def test_policy_only_checkpoint(self, tmp_path):
        bundle = _trained_bundle()
        path = save_checkpoint(tmp_path / "policy.npz", bundle, env_hash="abc", episode=3, include_training_state=False)
        header = read_header(path)
        assert header["training_state"] is False
        assert header["widths"]["actor"] == [2, 8, 8, 8, 1]
        policy = load_policy(path, obs_dim=2, action_dim=1)
        obs = np.array([0.4, 0.2])
        assert np.allclose(policy.act(obs), bundle.act(obs))
        with pytest.raises(ConfigurationError, match="cannot resume"):
            load_bundle(path, _bundle())

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            load_policy(tmp_path / "absent.npz", 2, 1)

    def test_wrong_dimensions(self, tmp_path):
        path = save_checkpoint(tmp_path / "policy.npz", _bundle(), env_hash="abc", episode=0)
        with pytest.raises(ConfigurationError):
            load_policy(path, obs_dim=3, action_dim=1)
        with pytest.raises(ConfigurationError):
            load_bundle(path, _bundle(hidden=4))

    def test_environment_mismatch_only_warns(self, tmp_path):
        path = save_checkpoint(tmp_path / "policy.npz", _bundle(), env_hash="abc", episode=0)
        assert load_policy(path, 2, 1, env_hash="other").actor.net.sizes == (2, 8, 8, 8, 1)

    def test_file_without_header(self, tmp_path):
        path = tmp_path / "bare.npz"
        np.savez(path, weights=np.zeros(3))
        with pytest.raises(ConfigurationError, match="header"):
            read_header(path)
