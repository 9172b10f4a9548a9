from __future__ import annotations

import copy
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dwm_lab.algo.errors import ConfigurationError

LAYER_NORM_EPS = 1e-5
FINAL_INIT_SCALE = 3e-3


class Layer:
    """Batch-first layer with a cached forward pass and reverse-mode gradients."""
    params: Dict[str, np.ndarray]
    grads: Dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self):
        for name, value in self.params.items():
            self.grads[name] = np.zeros_like(value)


class Linear(Layer):
    def __init__(self, fan_in: int, fan_out: int, rng: Optional[np.random.Generator] = None, scale: Optional[float] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(fan_in) if scale is None else scale
        self.params["W"] = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        self.params["b"] = rng.uniform(-bound, bound, size=fan_out)
        self.zero_grad()
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.grads["W"] = grad.T @ self._x
        self.grads["b"] = grad.sum(axis=0)
        return grad @ self.params["W"]


class LayerNorm(Layer):
    """Per-sample normalization over the features followed by a learned gain and bias."""

    def __init__(self, width: int, eps: float = LAYER_NORM_EPS):
        super().__init__()
        self.eps = eps
        self.params["gain"] = np.ones(width)
        self.params["bias"] = np.zeros(width)
        self.zero_grad()
        self._xhat = None
        self._inv_std = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        mean = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv_std
        return self._xhat * self.params["gain"] + self.params["bias"]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat = self._xhat
        self.grads["gain"] = np.sum(grad * xhat, axis=0)
        self.grads["bias"] = grad.sum(axis=0)
        dxhat = grad * self.params["gain"]
        width = xhat.shape[1]
        return (self._inv_std / width) * (width * dxhat - dxhat.sum(axis=1, keepdims=True)
                                          - xhat * np.sum(dxhat * xhat, axis=1, keepdims=True))


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.01):
        super().__init__()
        self.slope = slope
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad, self.slope * grad)


class Mlp:
    """
    Fully connected network: every hidden layer is Linear -> LayerNorm -> LeakyReLU, the output layer is linear.

    Args:
        sizes: layer widths from input to output, e.g. (2, 32, 32, 32, 1).
        leaky_slope: negative-side slope of the activations.
        rng: initialization stream.
    """

    def __init__(self, sizes: Sequence[int], leaky_slope: float = 0.01, rng: Optional[np.random.Generator] = None):
        if len(sizes) < 2 or any(size < 1 for size in sizes):
            raise ConfigurationError(f"Invalid layer widths {list(sizes)}")
        self.sizes = tuple(int(size) for size in sizes)
        self.layers: List[Layer] = []
        last = len(self.sizes) - 2
        for index, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            self.layers.append(Linear(fan_in, fan_out, rng, scale=FINAL_INIT_SCALE if index == last else None))
            if index < last:
                self.layers += [LayerNorm(fan_out), LeakyReLU(leaky_slope)]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ConfigurationError(f"Network expects {self.sizes[0]} inputs, got {x.shape[1]}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Propagate d(loss)/d(output) of the last forward pass; fills every layer's grads, returns d(loss)/d(input)."""
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def named_parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [(f"{index}.{name}", value) for index, layer in enumerate(self.layers)
                for name, value in layer.params.items()]

    def parameters(self) -> List[np.ndarray]:
        return [value for _, value in self.named_parameters()]

    def gradients(self) -> List[np.ndarray]:
        return [layer.grads[name] for layer in self.layers for name in layer.params]

    def load_parameters(self, values: Sequence[np.ndarray]):
        current = self.parameters()
        if len(values) != len(current):
            raise ConfigurationError(f"Expected {len(current)} parameter arrays, got {len(values)}")
        for target, value in zip(current, values):
            value = np.asarray(value, dtype=float)
            if value.shape != target.shape:
                raise ConfigurationError(f"Parameter shape {value.shape} does not match {target.shape}")
            target[...] = value

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    @property
    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.parameters()))


def squash(z: np.ndarray, u_max: float) -> Tuple[np.ndarray, np.ndarray]:
    """Map pre-activations onto covariances: L = sqrt(u_max) (tanh z + 1) / 2, U = L^2 in [0, u_max]. Returns (U, dU/dz)."""
    scale = np.sqrt(u_max)
    t = np.tanh(z)
    L = scale * (t + 1.0) / 2.0
    return L ** 2, L * scale * (1.0 - t ** 2)


class Actor:
    """Deterministic policy mu(s) = squash(net(s)) with outputs in [0, u_max]."""

    def __init__(self, net: Mlp, u_max: float):
        self.net = net
        self.u_max = u_max
        self._slope = None

    def preactivation(self, obs: np.ndarray) -> np.ndarray:
        return self.net.forward(obs)

    def forward(self, obs: np.ndarray, noise: Optional[np.ndarray] = None) -> np.ndarray:
        z = self.preactivation(obs)
        if noise is not None:
            z = z + noise
        U, self._slope = squash(z, self.u_max)
        return U

    def backward(self, grad_U: np.ndarray) -> np.ndarray:
        return self.net.backward(grad_U * self._slope)


class Critic:
    """Q(s, a) on the concatenated input (s, U / u_max)."""

    def __init__(self, net: Mlp, obs_dim: int, u_max: float):
        self.net = net
        self.obs_dim = obs_dim
        self.u_max = u_max

    def forward(self, obs: np.ndarray, U: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(obs), np.atleast_2d(U) / self.u_max], axis=1)
        return self.net.forward(x)

    def backward(self, grad_q: np.ndarray) -> np.ndarray:
        """Returns d(loss)/dU for the last forward pass."""
        grad_in = self.net.backward(grad_q)
        return grad_in[:, self.obs_dim:] / self.u_max
