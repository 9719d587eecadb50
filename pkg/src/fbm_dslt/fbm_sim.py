"""Exact sampling of fBm on a uniform grid.

The fast path embeds the fractional Gaussian noise autocovariance in a
circulant of size ``2n`` and colours complex white noise with one FFT
(Davies-Harte / Wood-Chan); the path is the cumulative sum of the noise.
Dense Cholesky of the path covariance is kept as the small-``n`` oracle.

Every path owns its RNG stream: path ``i`` of an ensemble with master seed
``m`` draws from ``SeedSequence(m, spawn_key=(i,))``, so an ensemble is
identical however it is split across workers.
"""
from dataclasses import dataclass, field
from functools import lru_cache
import json

import numpy as np
from scipy import linalg

from .errors import CholeskyError, DomainError, EmbeddingError
from .fbm_model import HurstModel, covariance

METHODS = ("circulant", "cholesky")
CHOLESKY_CAP = 4096
EMBEDDING_TOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    n: int
    T: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"grid needs n >= 2 steps, got {self.n!r}")
        if not self.T > 0:
            raise DomainError(f"horizon must be positive, got {self.T!r}")

    @property
    def dt(self):
        return self.T / self.n

    @property
    def times(self):
        return np.arange(self.n + 1) * self.dt


@dataclass(frozen=True)
class FbmPath:
    grid: GridSpec
    values: np.ndarray = field(repr=False)
    seed: int
    method: str
    H: float

    def __post_init__(self):
        if self.values.shape != (self.grid.n + 1,):
            raise DomainError("path must carry n + 1 values")
        if self.values[0] != 0.0:
            raise DomainError("fBm paths start at 0")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("path contains non-finite values")


def fgn_autocovariance(model, grid, k):
    """Autocovariance at lag ``k`` of the increments ``B_{t_{j+1}} - B_{t_j}``."""
    k = np.asarray(k, dtype=float)
    if np.any(k < 0) or np.any(k > grid.n):
        raise DomainError(f"lag must lie in [0, {grid.n}]")
    h2 = 2.0 * model.H
    return (0.5 * grid.dt**h2 * (np.abs(k + 1) ** h2 - 2 * np.abs(k) ** h2 + np.abs(k - 1) ** h2))[()]


@lru_cache(maxsize=32)
def _circulant_sqrt_eigs(H, T, n):
    model, grid = HurstModel(H, T), GridSpec(n, T)
    gamma = fgn_autocovariance(model, grid, np.arange(n + 1))
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    floor = -EMBEDDING_TOL * lam.max()
    if lam.min() < floor:
        raise EmbeddingError(
            f"circulant embedding has eigenvalue {lam.min():.3e} < {floor:.3e} (H={H}, n={n})"
        )
    lam = np.clip(lam, 0.0, None)
    out = np.sqrt(lam / (2 * n))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=8)
def _cholesky_factor(H, T, n):
    if n > CHOLESKY_CAP:
        raise DomainError(f"cholesky method is capped at n = {CHOLESKY_CAP}, got {n}")
    t = GridSpec(n, T).times[1:]
    cov = covariance(HurstModel(H, T), t[:, None], t[None, :])
    try:
        L = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise CholeskyError(f"path covariance is not numerically positive definite: {exc}") from exc
    L.setflags(write=False)
    return L


def path_rng(master_seed, index=None):
    """Generator for a single path (``index=None``) or path ``index`` of an ensemble."""
    key = () if index is None else (int(index),)
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=key))


def _noise(rng, n, method):
    # circulant draws 4n normals (real and imaginary parts), cholesky draws n
    return rng.standard_normal(4 * n if method == "circulant" else n)


def _colour(model, grid, z, method):
    """Map rows of standard normals to path values (without the leading 0)."""
    n = grid.n
    if method == "circulant":
        s = _circulant_sqrt_eigs(model.H, grid.T, n)
        w = (z[:, : 2 * n] + 1j * z[:, 2 * n :]) * s
        fgn = np.fft.fft(w, axis=1).real[:, :n]
        return np.cumsum(fgn, axis=1)
    L = _cholesky_factor(model.H, grid.T, n)
    return z @ L.T


def _check_args(model, grid, method):
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}, got {method!r}")
    if abs(model.T - grid.T) > 1e-12 * grid.T:
        raise DomainError("model and grid horizons differ")


def sample_path(model, grid, seed, method="circulant"):
    """One exact fBm path on ``grid``, deterministic in ``(seed, method, n, H, T)``."""
    _check_args(model, grid, method)
    z = _noise(path_rng(seed), grid.n, method)[None, :]
    values = np.concatenate([[0.0], _colour(model, grid, z, method)[0]])
    return FbmPath(grid=grid, values=values, seed=int(seed), method=method, H=model.H)


def sample_paths(model, grid, master_seed, n_paths, method="circulant", start=0):
    """Matrix of paths ``start .. start + n_paths - 1`` of an ensemble.

    Row ``i`` depends only on ``(master_seed, start + i)``; the first column
    is identically zero.
    """
    _check_args(model, grid, method)
    z = np.stack([_noise(path_rng(master_seed, start + i), grid.n, method) for i in range(n_paths)])
    out = np.zeros((n_paths, grid.n + 1))
    out[:, 1:] = _colour(model, grid, z, method)
    return out


def dump_header(model, grid, master_seed, method, n_paths):
    return {
        "format": "fbm-paths/1",
        "H": model.H,
        "T": grid.T,
        "n": grid.n,
        "n_paths": int(n_paths),
        "master_seed": int(master_seed),
        "method": method,
    }


def write_paths(path, matrix, header, fmt="npz"):
    """Write a path matrix (rows = paths).

    ``npz`` stores arrays ``paths`` and ``header`` (a JSON string);
    ``csv`` writes the JSON header on a leading ``#`` line.
    """
    if fmt == "npz":
        with open(path, "wb") as fh:
            np.savez(fh, paths=matrix, header=np.array(json.dumps(header, sort_keys=True)))
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            np.savetxt(fh, matrix, delimiter=",", fmt="%.17g")
    else:
        raise DomainError(f"unknown path dump format {fmt!r}")


def read_paths(path):
    """Inverse of :func:`write_paths`; returns ``(matrix, header)``."""
    path = str(path)
    if path.endswith(".npz"):
        with np.load(path) as data:
            return data["paths"], json.loads(str(data["header"]))
    with open(path) as fh:
        header = json.loads(fh.readline()[1:])
        matrix = np.loadtxt(fh, delimiter=",", ndmin=2)
    return matrix, header


def embedding_min_eigenvalue(model, grid):
    """Smallest raw circulant eigenvalue, for diagnostics."""
    n = grid.n
    gamma = fgn_autocovariance(model, grid, np.arange(n + 1))
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    return float(np.fft.fft(row).real.min())


__all__ = [
    "GridSpec",
    "FbmPath",
    "fgn_autocovariance",
    "sample_path",
    "sample_paths",
    "path_rng",
    "write_paths",
    "read_paths",
    "dump_header",
    "METHODS",
]
