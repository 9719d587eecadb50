"""Special functions: Hermite polynomials, Beta, heat kernel, normal law.

Hermite polynomials follow the *probabilists'* convention,

    H_0 = 1,  H_1(x) = x,  H_{q+1}(x) = x H_q(x) - q H_{q-1}(x),

so that ``E[H_p(Z) H_q(Z)] = q! delta_{pq}`` for a standard normal Z.  The
chaos projections in :mod:`fbm_dslt.dslt` rely on this normalisation; the
physicists' polynomials (``scipy.special.hermite``) would be wrong here.
"""
import math

import numpy as np
from scipy import special

from .errors import DivergentIntegralError, DomainError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise DomainError("argument must be finite")


def hermite(q, x):
    """Probabilists' Hermite polynomial ``H_q(x)`` by three-term recurrence.

    ``x`` may be a scalar or an array; the result has the same shape.
    """
    if q < 0 or int(q) != q:
        raise DomainError(f"Hermite degree must be a nonnegative integer, got {q!r}")
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    h_prev = np.ones_like(x)
    if q == 0:
        return h_prev[()]
    h = x.copy()
    for k in range(1, int(q)):
        h_prev, h = h, x * h - k * h_prev
    return h[()]


class HermiteEvaluator:
    """Evaluates all Hermite polynomials up to ``max_degree`` in one sweep.

    >>> HermiteEvaluator(3).table(2.0)[3]
    2.0
    """

    def __init__(self, max_degree):
        if max_degree < 0 or int(max_degree) != max_degree:
            raise DomainError("max_degree must be a nonnegative integer")
        self.max_degree = int(max_degree)

    def table(self, x):
        """Array of shape ``(max_degree + 1,) + x.shape`` holding H_0..H_max."""
        x = np.asarray(x, dtype=float)
        _check_finite(x)
        out = np.empty((self.max_degree + 1,) + x.shape)
        out[0] = 1.0
        if self.max_degree >= 1:
            out[1] = x
        for k in range(1, self.max_degree):
            out[k + 1] = x * out[k] - k * out[k - 1]
        return out

    def __call__(self, q, x):
        if q > self.max_degree:
            raise DomainError(f"degree {q} exceeds max_degree {self.max_degree}")
        return self.table(x)[q][()]


def heat_kernel(eps, x):
    """Centred Gaussian density with variance ``eps``."""
    if not eps > 0:
        raise DomainError(f"heat kernel variance must be positive, got {eps!r}")
    x = np.asarray(x, dtype=float)
    return (np.exp(-0.5 * x * x / eps) / math.sqrt(2.0 * math.pi * eps))[()]


def heat_kernel_deriv(eps, x):
    """Spatial derivative ``-(x / eps) p_eps(x)`` of the heat kernel."""
    if not eps > 0:
        raise DomainError(f"heat kernel variance must be positive, got {eps!r}")
    x = np.asarray(x, dtype=float)
    return (-(x / eps) * np.exp(-0.5 * x * x / eps) / math.sqrt(2.0 * math.pi * eps))[()]


def log_beta(a, b):
    return special.gammaln(a) + special.gammaln(b) - special.gammaln(a + b)


def beta_fn(a, b):
    """Euler Beta function, computed through log-Gamma to avoid overflow."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("Beta function arguments must be positive")
    return np.exp(log_beta(a, b))[()]


def lemma_beta_integral(c, beta, alpha, gamma):
    """Closed form of ``int_0^inf a**alpha * (c + a**beta)**gamma da``.

    Requires ``c, beta > 0``, ``alpha > -1`` and ``1 + alpha + gamma*beta < 0``;
    outside that region the integral diverges.
    """
    if not (c > 0 and beta > 0):
        raise DomainError("c and beta must be positive")
    if not alpha > -1:
        raise DivergentIntegralError("integral diverges at 0 unless alpha > -1")
    tail = 1.0 + alpha + gamma * beta
    if not tail < 0:
        raise DivergentIntegralError(
            f"integral diverges at infinity: 1 + alpha + gamma*beta = {tail} >= 0"
        )
    p = (alpha + 1.0) / beta
    return c ** (tail / beta) / beta * beta_fn(p, -tail / beta)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return (np.exp(-0.5 * x * x) / _SQRT_2PI)[()]


def norm_cdf(x):
    return special.ndtr(x)


def norm_ppf(p):
    return special.ndtri(p)
