from __future__ import annotations

import hashlib
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np
import pandas as pd
import ujson
import yaml

from dwm_lab.algo.errors import ConfigurationError
from dwm_lab.log import get_logger

PSD_TOLERANCE = 1e-12

# Named random sub-streams; every draw in the lab comes from one of these.
RNG_STREAMS = {
    "plant": 11,
    "watermark": 12,
    "recording": 13,
    "exploration": 14,
    "control": 15,
    "initial": 16,
    "training": 17,
}


def make_rng(seed: int, stream: str, replication: int = 0, substream: int = 0) -> np.random.Generator:
    if stream not in RNG_STREAMS:
        raise ConfigurationError(f"Unknown random stream: {stream}")
    return np.random.default_rng([int(seed), int(replication), RNG_STREAMS[stream], int(substream)])


def as_matrix(value: Any, name: str, shape: Tuple[int, int] | None = None) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(value, dtype=float))
    if matrix.ndim != 2:
        raise ConfigurationError(f"{name} must be a matrix, got {matrix.ndim} dimensions")
    if shape is not None and matrix.shape != shape:
        raise ConfigurationError(f"{name} has shape {matrix.shape}, expected {shape}")
    return matrix


def as_vector(value: Any, name: str, size: int | None = None) -> np.ndarray:
    vector = np.atleast_1d(np.asarray(value, dtype=float)).reshape(-1)
    if size is not None and vector.size != size:
        raise ConfigurationError(f"{name} has {vector.size} entries, expected {size}")
    return vector


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def check_psd(matrix: np.ndarray, name: str, tol: float = PSD_TOLERANCE) -> np.ndarray:
    """
    Validate that a matrix is square, symmetric and positive semi-definite.

    Returns the symmetrized matrix. Eigenvalues down to -tol are accepted.
    """
    if matrix.shape[0] != matrix.shape[1]:
        raise ConfigurationError(f"{name} must be square, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ConfigurationError(f"{name} has non-finite entries")
    sym = symmetrize(matrix)
    if np.max(np.abs(sym - matrix), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(matrix), initial=0.0)):
        raise ConfigurationError(f"{name} is not symmetric")
    min_eig = np.min(np.linalg.eigvalsh(sym)) if sym.size else 0.0
    if min_eig < -tol:
        raise ConfigurationError(f"{name} is not positive semi-definite (min eigenvalue {min_eig:.3e})")
    return sym


def psd_factor(matrix: np.ndarray) -> np.ndarray:
    """
    Return F with F F^T = matrix, used to draw N(0, matrix) samples as F z.

    Singular matrices take the clamped eigen square root so zero directions stay exactly zero.
    """
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(symmetrize(matrix))
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(symmetrize(matrix))
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def config_hash(tree: Mapping[str, Any]) -> str:
    payload = ujson.dumps(tree, sort_keys=True, escape_forward_slashes=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def write_table(frame: pd.DataFrame, path: Path | str, header: Mapping[str, Any]) -> Path:
    """
    Write a tidy CSV whose first lines are '# key=value' comments (config hash, schema version).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        for key, value in header.items():
            f.write(f"# {key}={value}\n")
        frame.to_csv(f, index=False, float_format="%.12g", lineterminator="\n")
    return path


def read_table(path: Path | str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def read_table_header(path: Path | str) -> Dict[str, str]:
    header = {}
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition("=")
            header[key] = value
    return header


def write_json(payload: Mapping[str, Any], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        f.write(ujson.dumps(payload, indent=2, sort_keys=True, escape_forward_slashes=False))
        f.write("\n")
    return path


def parse_override_args(args: List[str]) -> Tuple[Dict[str, Any], List[str]]:
    """
    Split command-line arguments into configuration overrides and other arguments.

    Args:
        args: A list of arguments, e.g. ['--detector.alpha=0.01', '--sweep.variances=[1e-4, 1e-3]']

    Returns:
        A nested dict of overrides and the list of remaining arguments.
    """
    overrides: Dict[str, Any] = {}
    other_args = []
    for arg in args or []:
        arg = arg.strip()
        if not arg.startswith('--'):
            other_args.append(arg)
            continue
        arg = arg.strip('-').strip()
        vals = arg.split('=', 1)
        if len(vals) != 2 or '.' not in vals[0]:
            other_args.append(arg)
            continue
        key, value = _fix_key_value(*vals)
        node = overrides
        *parents, leaf = key.split('.')
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
        get_logger().debug(f'Override {key} = {value!r}')
    return overrides, other_args


def _fix_key_value(key: str, value: str):
    key = key.strip().lower().replace('__', '.')
    value = value.strip()
    try:
        value = yaml.safe_load(value)
    except Exception as e:
        get_logger().debug(f"Failed to parse YAML for config override {key}={value}", artifact={"error": e})
    return key, value


def deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Merge update into a copy of base; dicts merge recursively, everything else (lists included) replaces."""
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def get_version() -> str:
    """Installed distribution version, "unknown" when running from an uninstalled checkout."""
    try:
        return version("dwm-lab")
    except PackageNotFoundError:
        return "unknown"
