from __future__ import annotations

from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import ujson

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.log import get_logger
from dwm_lab.rl.ddpg_agent import AgentBundle, DdpgHyperparameters
from dwm_lab.rl.networks import Actor, Mlp

FORMAT_VERSION = 1
_NETWORKS = ("actor", "actor_target", "critic1", "critic2", "critic1_target", "critic2_target")


def _encode_rng(rng: np.random.Generator) -> Dict[str, Any]:
    # PCG64 state words are 128-bit, kept as decimal strings
    state = dict(rng.bit_generator.state)
    state["state"] = {key: str(value) for key, value in state["state"].items()}
    return state


def _decode_rng(rng: np.random.Generator, state: Dict[str, Any]):
    state = dict(state)
    state["state"] = {key: int(value) for key, value in state["state"].items()}
    rng.bit_generator.state = state


def _net(bundle: AgentBundle, name: str) -> Mlp:
    return getattr(bundle, name).net


def save_checkpoint(path: Path | str, bundle: AgentBundle, env_hash: str, episode: int,
                    include_training_state: bool = True) -> Path:
    """
    Write the agent as a numpy archive: a JSON header (format version, environment hash, layer widths,
    episode) plus one array per parameter. Training checkpoints also carry the optimizer accumulators,
    the replay buffer and the random-stream states so a resumed run continues exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "env_hash": env_hash,
        "episode": int(episode),
        "u_max": bundle.u_max,
        "widths": {name: list(_net(bundle, name).sizes) for name in _NETWORKS},
        "hyper": asdict(bundle.hyper),
        "training_state": include_training_state,
    }
    arrays: Dict[str, np.ndarray] = {}
    names = _NETWORKS if include_training_state else ("actor",)
    for name in names:
        for key, value in _net(bundle, name).named_parameters():
            arrays[f"{name}/{key}"] = value
    if bundle.normalizer is not None:
        arrays["normalizer/mean"] = bundle.normalizer.mean
        arrays["normalizer/m2"] = bundle.normalizer.m2
        header["normalizer_count"] = bundle.normalizer.count
    if include_training_state:
        for name, optimizer in bundle.optimizers.items():
            for index, cache in enumerate(optimizer.cache):
                arrays[f"rmsprop/{name}/{index}"] = cache
        arrays.update(bundle.buffer.state_dict())
        header["buffer_size"] = bundle.buffer.size
        header["ou"] = {"state": bundle.noise.state.tolist(), "sigma": bundle.noise.sigma,
                        "rng": _encode_rng(bundle.noise.rng)}
        header["rng"] = _encode_rng(bundle.rng)
    arrays["header"] = np.array(ujson.dumps(header))
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    get_logger().debug(f"Checkpoint written to {path} (episode {episode})")
    return path


def read_header(path: Path | str) -> Dict[str, Any]:
    with np.load(_existing(path)) as archive:
        return _header(archive)


def _existing(path: Path | str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Checkpoint not found: {path}")
    return path


def _header(archive) -> Dict[str, Any]:
    if "header" not in archive.files:
        raise ConfigurationError("Checkpoint has no header")
    header = ujson.loads(str(archive["header"]))
    if header.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"Checkpoint format version {header.get('format_version')} is not supported "
                                 f"(expected {FORMAT_VERSION})")
    return header


def _check_env(header: Dict[str, Any], env_hash: Optional[str], path: Path):
    if env_hash is not None and header["env_hash"] != env_hash:
        get_logger().warning(f"Checkpoint {path} was trained on environment {header['env_hash']}, "
                             f"running on {env_hash}")


def _load_net(archive, name: str, net: Mlp):
    values = []
    for key, target in net.named_parameters():
        entry = f"{name}/{key}"
        if entry not in archive.files:
            raise ConfigurationError(f"Checkpoint is missing parameter {entry}")
        if archive[entry].shape != target.shape:
            raise ConfigurationError(f"Checkpoint parameter {entry} has shape {archive[entry].shape}, "
                                     f"network expects {target.shape}")
        values.append(archive[entry])
    net.load_parameters(values)


def load_bundle(path: Path | str, bundle: AgentBundle, env_hash: Optional[str] = None) -> int:
    """Restore a training checkpoint into a bundle built with the same widths; returns the stored episode count."""
    path = _existing(path)
    with np.load(path) as archive:
        header = _header(archive)
        if not header.get("training_state"):
            raise ConfigurationError(f"Checkpoint {path} holds a policy only and cannot resume training")
        _check_env(header, env_hash, path)
        for name in _NETWORKS:
            expected = list(_net(bundle, name).sizes)
            if header["widths"][name] != expected:
                raise ConfigurationError(f"Checkpoint {name} has widths {header['widths'][name]}, expected {expected}")
            _load_net(archive, name, _net(bundle, name))
        for name, optimizer in bundle.optimizers.items():
            for index, cache in enumerate(optimizer.cache):
                cache[...] = archive[f"rmsprop/{name}/{index}"]
        bundle.buffer.load_state_dict({key: archive[key] for key in archive.files if key.startswith("buffer/")})
        if bundle.normalizer is not None and "normalizer/mean" in archive.files:
            bundle.normalizer.mean[...] = archive["normalizer/mean"]
            bundle.normalizer.m2[...] = archive["normalizer/m2"]
            bundle.normalizer.count = int(header["normalizer_count"])
    bundle.noise.state = np.asarray(header["ou"]["state"], dtype=float)
    bundle.noise.sigma = float(header["ou"]["sigma"])
    _decode_rng(bundle.noise.rng, header["ou"]["rng"])
    _decode_rng(bundle.rng, header["rng"])
    return int(header["episode"])


def load_policy(path: Path | str, obs_dim: int, action_dim: int, env_hash: Optional[str] = None) -> AgentBundle:
    """
    Load only what evaluation needs: the actor (and the observation normalizer) of a checkpoint.

    Raises:
        ConfigurationError: missing file, unsupported format or widths that do not fit the environment.
    """
    path = _existing(path)
    with np.load(path) as archive:
        header = _header(archive)
        _check_env(header, env_hash, path)
        widths = header["widths"]["actor"]
        if widths[0] != obs_dim or widths[-1] != action_dim:
            raise ConfigurationError(f"Checkpoint actor maps {widths[0]} -> {widths[-1]}, "
                                     f"environment needs {obs_dim} -> {action_dim}")
        hyper = DdpgHyperparameters(**header["hyper"])
        hyper.buffer_size = 1
        bundle = AgentBundle.create(obs_dim, action_dim, widths[1], header["u_max"], hyper)
        if list(bundle.actor.net.sizes) != widths:
            bundle.actor = Actor(Mlp(widths, hyper.leaky_slope), header["u_max"])
        _load_net(archive, "actor", bundle.actor.net)
        if bundle.normalizer is not None and "normalizer/mean" in archive.files:
            bundle.normalizer.mean[...] = archive["normalizer/mean"]
            bundle.normalizer.m2[...] = archive["normalizer/m2"]
            bundle.normalizer.count = int(header["normalizer_count"])
    return bundle
