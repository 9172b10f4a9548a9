from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from dwm_lab.algo.errors import ConfigurationError, TrainingDivergedError
from dwm_lab.algo.utils import make_rng
from dwm_lab.env.mdp import MdpState
from dwm_lab.rl.networks import Actor, Critic, Mlp

_INITIAL_BUFFER = 4096


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]

    def as_arrays(self) -> Dict[str, np.ndarray]:
        return {"obs": self.obs, "action": self.action, "reward": self.reward, "next_obs": self.next_obs,
                "done": self.done}


class ReplayBuffer:
    """Ring buffer of transitions (s, a, r, s', done); storage grows geometrically up to the capacity."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity < 1:
            raise ConfigurationError(f"Replay capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.size = 0
        self.position = 0
        self._allocate(min(self.capacity, _INITIAL_BUFFER))

    def _allocate(self, rows: int):
        old = getattr(self, "_storage", None)
        width = {"obs": self.obs_dim, "action": self.action_dim, "reward": 1, "next_obs": self.obs_dim, "done": 1}
        self._storage = {name: np.zeros((rows, cols)) for name, cols in width.items()}
        if old is not None:
            for name, values in old.items():
                self._storage[name][:values.shape[0]] = values

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward: float, next_obs, done: bool):
        rows = self._storage["obs"].shape[0]
        if self.position >= rows and rows < self.capacity:
            self._allocate(min(self.capacity, 2 * rows))
        i = self.position
        self._storage["obs"][i] = np.asarray(obs, dtype=float).reshape(-1)
        self._storage["action"][i] = np.asarray(action, dtype=float).reshape(-1)
        self._storage["reward"][i] = reward
        self._storage["next_obs"][i] = np.asarray(next_obs, dtype=float).reshape(-1)
        self._storage["done"][i] = float(done)
        self.position = (self.position + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size > self.size:
            raise ConfigurationError(f"Cannot sample {batch_size} transitions from a buffer holding {self.size}")
        index = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(**{name: values[index] for name, values in self._storage.items()})

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"buffer/{name}": values[:self.size].copy() for name, values in self._storage.items()}
        state["buffer/position"] = np.array(self.position)
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        size = state["buffer/obs"].shape[0]
        self._allocate(min(self.capacity, max(size, _INITIAL_BUFFER)))
        for name in self._storage:
            self._storage[name][:size] = state[f"buffer/{name}"]
        self.size = size
        self.position = int(state["buffer/position"])


class OuNoise:
    """Ornstein-Uhlenbeck exploration noise x <- x + theta (mu - x) + sigma N(0, 1)."""

    def __init__(self, action_dimension: int, mu: float = 0.0, theta: float = 0.15, sigma: float = 0.99,
                 decay: float = 0.995, rng: Optional[np.random.Generator] = None):
        self.action_dimension = action_dimension
        self.mu = mu
        self.theta = theta
        self.sigma = sigma
        self.decay = decay
        self.rng = rng or np.random.default_rng(0)
        self.state = np.ones(self.action_dimension) * self.mu

    def reset(self):
        self.state = np.ones(self.action_dimension) * self.mu

    def sample(self) -> np.ndarray:
        x = self.state
        dx = self.theta * (self.mu - x) + self.sigma * self.rng.standard_normal(self.action_dimension)
        self.state = x + dx
        return self.state.copy()

    def end_episode(self):
        self.sigma = max(self.sigma * self.decay, 0.0)


def ou_sample(noise: OuNoise) -> np.ndarray:
    return noise.sample()


class RMSprop:
    """RMSprop over a fixed list of parameter arrays, updated in place."""

    def __init__(self, params: List[np.ndarray], lr: float = 1e-3, rho: float = 0.99, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.cache = [np.zeros_like(p) for p in params]

    def step(self, grads: List[np.ndarray]):
        for p, g, c in zip(self.params, grads, self.cache):
            c *= self.rho
            c += (1.0 - self.rho) * g * g
            p -= self.lr * g / (np.sqrt(c) + self.eps)


def clip_gradients(grads: List[np.ndarray], max_norm: float) -> float:
    """Scale the gradient list in place to a global l2 norm of at most max_norm; returns the norm before clipping."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm > 0:
        for g in grads:
            g *= max_norm / norm
    return norm


def soft_update(target: Mlp, source: Mlp, tau: float):
    for t, s in zip(target.parameters(), source.parameters()):
        t *= 1.0 - tau
        t += tau * s


class RunningNorm:
    """Running mean and variance of observations (Welford), used when observation normalization is on."""

    def __init__(self, dim: int):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, obs: np.ndarray):
        self.count += 1
        delta = obs - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (obs - self.mean)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        if self.count < 2:
            return obs
        std = np.sqrt(self.m2 / (self.count - 1))
        return (obs - self.mean) / np.where(std > 0, std, 1.0)


@dataclass
class DdpgHyperparameters:
    lr: float = 1e-3
    tau: float = 5e-3
    gamma: float = 0.99
    batch_size: int = 128
    buffer_size: int = 1_000_000
    grad_clip: float = 1.0
    leaky_slope: float = 0.01
    rmsprop_rho: float = 0.99
    rmsprop_eps: float = 1e-8
    ou_mu: float = 0.0
    ou_sigma: float = 0.99
    ou_theta: float = 0.15
    ou_decay: float = 0.995
    normalize_observations: bool = False

    @classmethod
    def from_section(cls, section) -> "DdpgHyperparameters":
        values = section.model_dump() if hasattr(section, "model_dump") else dict(section)
        return cls(**{key: values[key] for key in cls.__dataclass_fields__ if key in values})


@dataclass
class AgentBundle:
    """Actor, twin critics, their target copies, replay buffer, exploration noise and optimizer state."""
    actor: Actor
    actor_target: Actor
    critic1: Critic
    critic2: Critic
    critic1_target: Critic
    critic2_target: Critic
    buffer: ReplayBuffer
    noise: OuNoise
    hyper: DdpgHyperparameters
    rng: np.random.Generator
    normalizer: Optional[RunningNorm] = None
    optimizers: Dict[str, RMSprop] = field(default_factory=dict)

    @classmethod
    def create(cls, obs_dim: int, action_dim: int, hidden: int, u_max: float, hyper: DdpgHyperparameters,
               seed: int = 0) -> "AgentBundle":
        init = make_rng(seed, "training", substream=0)
        widths = [hidden] * 3
        actor = Actor(Mlp([obs_dim, *widths, action_dim], hyper.leaky_slope, init), u_max)
        critic1 = Critic(Mlp([obs_dim + action_dim, *widths, 1], hyper.leaky_slope, init), obs_dim, u_max)
        critic2 = Critic(Mlp([obs_dim + action_dim, *widths, 1], hyper.leaky_slope, init), obs_dim, u_max)
        bundle = cls(
            actor=actor,
            actor_target=Actor(actor.net.copy(), u_max),
            critic1=critic1,
            critic2=critic2,
            critic1_target=Critic(critic1.net.copy(), obs_dim, u_max),
            critic2_target=Critic(critic2.net.copy(), obs_dim, u_max),
            buffer=ReplayBuffer(hyper.buffer_size, obs_dim, action_dim),
            noise=OuNoise(action_dim, hyper.ou_mu, hyper.ou_theta, hyper.ou_sigma, hyper.ou_decay,
                          rng=make_rng(seed, "exploration")),
            hyper=hyper,
            rng=make_rng(seed, "training", substream=1),
            normalizer=RunningNorm(obs_dim) if hyper.normalize_observations else None,
        )
        for name in ("actor", "critic1", "critic2"):
            net = getattr(bundle, name).net
            bundle.optimizers[name] = RMSprop(net.parameters(), hyper.lr, hyper.rmsprop_rho, hyper.rmsprop_eps)
        return bundle

    @property
    def u_max(self) -> float:
        return self.actor.u_max

    @property
    def obs_dim(self) -> int:
        return self.actor.net.sizes[0]

    @property
    def action_dim(self) -> int:
        return self.actor.net.sizes[-1]

    def prepare(self, obs: np.ndarray) -> np.ndarray:
        return obs if self.normalizer is None else self.normalizer(obs)

    def act(self, obs: np.ndarray, explore: bool = False) -> np.ndarray:
        """Covariance diagonal for one observation, with OU noise on the pre-squash output when exploring."""
        noise = ou_sample(self.noise) if explore else None
        return self.actor.forward(self.prepare(np.asarray(obs, dtype=float)), noise)[0]

    def policy(self, state_scale: float = 1.0):
        """Greedy policy over MdpState for environment rollouts."""
        def act_on(state: MdpState):
            return np.diag(self.act(state.observation(state_scale)))
        return act_on


def td_target(batch: Batch, bundle: AgentBundle) -> np.ndarray:
    """y = r + gamma (1 - done) min(Q1', Q2') at the target actor's action."""
    next_obs = bundle.prepare(batch.next_obs)
    next_U = bundle.actor_target.forward(next_obs)
    q1 = bundle.critic1_target.forward(next_obs, next_U)
    q2 = bundle.critic2_target.forward(next_obs, next_U)
    return batch.reward + bundle.hyper.gamma * (1.0 - batch.done) * np.minimum(q1, q2)


def _critic_gradients(critic: Critic, obs: np.ndarray, action: np.ndarray, target: np.ndarray,
                      grad_clip: float) -> Tuple[float, List[np.ndarray]]:
    q = critic.forward(obs, action)
    error = q - target
    critic.net.backward(2.0 * error / error.shape[0])
    grads = critic.net.gradients()
    clip_gradients(grads, grad_clip)
    return float(np.mean(error ** 2)), grads


def _check_finite(batch: Batch, losses: Dict[str, float], *grads: List[np.ndarray]):
    finite = all(np.isfinite(value) for value in losses.values())
    finite = finite and all(np.all(np.isfinite(g)) for group in grads for g in group)
    if not finite:
        error = TrainingDivergedError(f"Non-finite loss or gradient {losses}")
        error.batch = batch
        raise error


def train_step(bundle: AgentBundle, batch: Batch) -> Dict[str, float]:
    """
    One DDPG update: both critics regress on the shared TD target, the actor ascends critic1,
    every network gradient is clipped to the configured global norm, then targets are soft-updated.
    Losses and gradients are checked before each optimizer step, so a diverging batch leaves the networks untouched.

    Raises:
        TrainingDivergedError: a loss or gradient is not finite; the batch is attached to the exception.
    """
    hyper = bundle.hyper
    obs = bundle.prepare(batch.obs)
    action = batch.action * bundle.u_max
    target = td_target(batch, bundle)
    losses = {}
    losses["critic1"], grads1 = _critic_gradients(bundle.critic1, obs, action, target, hyper.grad_clip)
    losses["critic2"], grads2 = _critic_gradients(bundle.critic2, obs, action, target, hyper.grad_clip)
    _check_finite(batch, losses, grads1, grads2)
    bundle.optimizers["critic1"].step(grads1)
    bundle.optimizers["critic2"].step(grads2)

    U = bundle.actor.forward(obs)
    q = bundle.critic1.forward(obs, U)
    losses["actor"] = float(-np.mean(q))
    grad_U = bundle.critic1.backward(-np.ones_like(q) / q.shape[0])
    bundle.critic1.net.zero_grad()
    bundle.actor.backward(grad_U)
    grads = bundle.actor.net.gradients()
    clip_gradients(grads, hyper.grad_clip)
    _check_finite(batch, losses, grads)
    bundle.optimizers["actor"].step(grads)

    soft_update(bundle.actor_target.net, bundle.actor.net, hyper.tau)
    soft_update(bundle.critic1_target.net, bundle.critic1.net, hyper.tau)
    soft_update(bundle.critic2_target.net, bundle.critic2.net, hyper.tau)
    return losses
