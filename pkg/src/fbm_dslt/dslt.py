"""Pathwise estimators of alpha_eps and of its Wiener-chaos components.

Both are Riemann sums over the triangle ``0 <= s < t <= T``.  Grid points are
used as centres of dual cells of width ``dt``; the first and last cells are
halved so the rule stays inside ``[0, T]`` (trapezoid weights per axis).
Diagonal cells are skipped: ``p'_eps(0) = 0`` and the chaos kernels are
singular there.

The chaos component of order ``2q - 1`` uses
``I_{2q-1}(1_[s,t]^{(2q-1)}) = (t-s)^{(2q-1)H} H_{2q-1}((B_t - B_s) / (t-s)^H)``.
Its sum depends on ``eps`` only through a lag kernel, so one pass over the
pairs builds per-lag Hermite sums and every ``(q, eps)`` follows by a dot
product.  That is what makes common-random-number schedules cheap.
"""
from dataclasses import dataclass
import math
import warnings

import numba
import numpy as np

from .errors import DomainError
from .fbm_model import ChaosKernelSpec, HurstModel, beta_q
from .fbm_sim import GridSpec

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ResolutionWarning(UserWarning):
    """Grid spacing exceeds the heat-kernel width sqrt(eps)."""


@dataclass(frozen=True)
class DsltEstimate:
    raw: float
    scaled: float
    eps: float
    grid: GridSpec


@dataclass(frozen=True)
class ChaosProjectionEstimate:
    q: int
    raw: float
    scaled: float
    eps: float


def trapezoid_weights(n):
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return w


@numba.njit(cache=True, fastmath=True)
def _alpha_pair_sums(paths, w, eps):
    m, n1 = paths.shape
    c = -0.5 / eps
    out = np.empty(m)
    for p in range(m):
        b = paths[p]
        tot = 0.0
        for i in range(n1 - 1):
            bi = b[i]
            acc = 0.0
            for j in range(i + 1, n1):
                d = b[j] - bi
                acc += w[j] * d * math.exp(c * d * d)
            tot += w[i] * acc
        out[p] = tot
    return out


@numba.njit(cache=True, fastmath=True)
def _lag_hermite_contract(paths, w, inv_sig, max_degree, degrees, kernels):
    """out[p, c] = sum_k kernels[c, k] * sum_i w_i w_{i+k} H_{degrees[c]}(d_ik * inv_sig[k])."""
    m, n1 = paths.shape
    ncomb = degrees.shape[0]
    out = np.zeros((m, ncomb))
    sums = np.empty(max_degree + 1)
    for p in range(m):
        b = paths[p]
        for k in range(1, n1):
            s = inv_sig[k]
            for d in range(max_degree + 1):
                sums[d] = 0.0
            for i in range(n1 - k):
                x = (b[i + k] - b[i]) * s
                ww = w[i] * w[i + k]
                h0 = 1.0
                h1 = x
                sums[0] += ww
                if max_degree >= 1:
                    sums[1] += ww * h1
                for d in range(1, max_degree):
                    h2 = x * h1 - d * h0
                    sums[d + 1] += ww * h2
                    h0 = h1
                    h1 = h2
            for c in range(ncomb):
                out[p, c] += kernels[c, k] * sums[degrees[c]]
    return out


def _as_matrix(paths):
    arr = np.ascontiguousarray(paths, dtype=float)
    return arr[None, :] if arr.ndim == 1 else arr


def _check_resolution(grid, eps):
    if grid.dt > math.sqrt(eps):
        warnings.warn(
            f"dt = {grid.dt:.3g} exceeds sqrt(eps) = {math.sqrt(eps):.3g}; "
            "the heat kernel is under-resolved",
            ResolutionWarning,
            stacklevel=3,
        )


def alpha_batch(paths, grid, eps):
    """Raw alpha_eps for every row of a path matrix."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps!r}")
    _check_resolution(grid, eps)
    sums = _alpha_pair_sums(_as_matrix(paths), trapezoid_weights(grid.n), float(eps))
    return -sums * grid.dt**2 * _INV_SQRT_2PI * eps**-1.5


def chaos_kernel(H, grid, q, eps):
    """Lag kernel ``(-1)^q beta_q (eps + l^2H)^(-q-1/2) l^((2q-1)H) dt^2`` at ``l = k dt``."""
    lag = np.arange(grid.n + 1) * grid.dt
    ker = np.zeros(grid.n + 1)
    lag1 = lag[1:]
    ker[1:] = (
        (-1) ** q * beta_q(q) * (eps + lag1 ** (2 * H)) ** (-q - 0.5) * lag1 ** ((2 * q - 1) * H)
    )
    return ker * grid.dt**2


def hermite_lag_functional(paths, grid, H, degrees, kernels):
    """``sum_k kernels[c, k] sum_i w_i w_{i+k} H_deg(normalised increment)`` per row."""
    degrees = np.asarray(degrees, dtype=np.int64)
    kernels = np.ascontiguousarray(kernels, dtype=float)
    if kernels.shape != (len(degrees), grid.n + 1):
        raise DomainError("kernels must have shape (len(degrees), n + 1)")
    lag = np.arange(grid.n + 1) * grid.dt
    inv_sig = np.zeros(grid.n + 1)
    inv_sig[1:] = lag[1:] ** -H
    return _lag_hermite_contract(
        _as_matrix(paths), trapezoid_weights(grid.n), inv_sig, int(degrees.max()), degrees, kernels
    )


def chaos_batch(paths, grid, H, combos):
    """Raw chaos projections for ``combos = [(q, eps), ...]``; shape ``(rows, len(combos))``."""
    for q, eps in combos:
        if int(q) != q or q < 1:
            raise DomainError(f"chaos index q must be an integer >= 1, got {q!r}")
        if not eps > 0:
            raise DomainError(f"eps must be positive, got {eps!r}")
        _check_resolution(grid, eps)
    degrees = [2 * q - 1 for q, _ in combos]
    kernels = np.stack([chaos_kernel(H, grid, q, eps) for q, eps in combos])
    return hermite_lag_functional(paths, grid, H, degrees, kernels)


def scale_alpha(model, eps, raw):
    """Multiply by ``eps^(3/2 - 1/H)``; the exponent vanishes at H = 2/3."""
    model.check_not_critical(only=(2.0 / 3.0,))
    return raw * eps ** (1.5 - 1.0 / model.H)


def scale_chaos(model, eps, raw):
    """Multiply by ``eps^(1 - 3/(4H))``; the exponent vanishes at H = 3/4."""
    model.check_not_critical(only=(0.75,))
    return raw * eps ** (1.0 - 0.75 / model.H)


def alpha_eps(path, eps):
    """alpha_eps for a single :class:`~fbm_dslt.fbm_sim.FbmPath`."""
    raw = float(alpha_batch(path.values, path.grid, eps)[0])
    model = HurstModel(path.H, path.grid.T)
    return DsltEstimate(raw=raw, scaled=raw * eps ** (1.5 - 1.0 / model.H), eps=eps, grid=path.grid)


def chaos_projection(path, spec):
    """Chaos component of order ``2 spec.q - 1`` of alpha_eps along ``path``."""
    if not isinstance(spec, ChaosKernelSpec):
        raise DomainError("spec must be a ChaosKernelSpec")
    if abs(spec.model.H - path.H) > 1e-12 or abs(spec.model.T - path.grid.T) > 1e-12 * path.grid.T:
        raise DomainError(
            f"kernel built for (H={spec.model.H}, T={spec.model.T}) but the path has "
            f"(H={path.H}, T={path.grid.T})"
        )
    raw = float(chaos_batch(path.values, path.grid, path.H, [(spec.q, spec.eps)])[0, 0])
    scaled = raw * spec.eps**spec.scaling_exponent_chaos
    return ChaosProjectionEstimate(q=spec.q, raw=raw, scaled=scaled, eps=spec.eps)
