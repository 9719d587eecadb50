"""Closed-form covariance machinery of fractional Brownian motion.

The increment cross-covariance ``mu(x, u1, u2) = E[B_{u1} (B_{x+u2} - B_x)]`` is a
mixed second difference of ``F(t) = t**(2H) / 2``.  Evaluated literally it
cancels catastrophically whenever the interval lengths differ by many orders
of magnitude, which is exactly where the variance integrals need it most.
:func:`mixed_difference` and :func:`first_difference` evaluate the pieces
without cancellation; :func:`mu_direct` keeps the literal formula for tests.
"""
from dataclasses import dataclass
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import optimize

from .errors import CriticalHurstError, DomainError, HurstWindowError, SingularityError

CRITICAL_TOL = 1e-12

_GL8_X, _GL8_W = leggauss(8)


def critical_values(q=None):
    """Hurst values excluded from every asymptotic statement."""
    vals = [2.0 / 3.0, 0.75]
    if q is not None:
        vals.append((4.0 * q - 3.0) / (4.0 * q - 2.0))
    return vals


@dataclass(frozen=True)
class HurstModel:
    H: float
    T: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.H < 1.0:
            raise DomainError(f"Hurst parameter must lie in (0, 1), got {self.H!r}")
        if not self.T > 0.0:
            raise DomainError(f"horizon must be positive, got {self.T!r}")

    def is_critical(self, q=None):
        return any(abs(self.H - c) < CRITICAL_TOL for c in critical_values(q))

    def check_not_critical(self, q=None, only=None):
        """Raise :class:`CriticalHurstError` at an excluded H.

        ``only`` restricts the check to the given values, e.g. ``(2/3,)`` for
        statements about alpha_eps alone.
        """
        for c in critical_values(q) if only is None else only:
            if abs(self.H - c) < CRITICAL_TOL:
                raise CriticalHurstError(
                    f"H = {self.H} is the critical value {c:.12g} "
                    f"(excluded: 2/3, 3/4 and (4q-3)/(4q-2) for q={q}); "
                    "limit behaviour there is not covered"
                )

    def regime(self, q=None):
        """Classify H against 2/3, 3/4 and (4q-3)/(4q-2).

        Returns a dict of flags; raises :class:`CriticalHurstError` on an
        exact critical value.
        """
        self.check_not_critical(q)
        H = self.H
        flags = {
            "alpha_clt": H > 2.0 / 3.0,
            "chaos_l2": 2.0 / 3.0 < H < 0.75,
        }
        if q is not None:
            flags["chaos_clt"] = q >= 2 and 0.75 < H < (4.0 * q - 3.0) / (4.0 * q - 2.0)
        return flags

    def require_window(self, lo, hi, what):
        """Raise unless ``lo < H < hi`` (critical endpoints included in the refusal)."""
        if not lo < self.H < hi:
            raise HurstWindowError(f"{what} requires {lo:.6g} < H < {hi:.6g}; got H = {self.H}")


@dataclass(frozen=True)
class IncrementPair:
    s1: float
    t1: float
    s2: float
    t2: float

    def __post_init__(self):
        if not (self.s1 <= self.t1 and self.s2 <= self.t2 and self.s1 <= self.s2):
            raise DomainError(
                "increment pair needs s1 <= t1, s2 <= t2 and s1 <= s2, "
                f"got {(self.s1, self.t1, self.s2, self.t2)}"
            )
        if min(self.s1, self.s2) < 0:
            raise DomainError("times must be nonnegative")

    def classify(self):
        """Index 1, 2 or 3 of the region S_i containing the pair (ties -> lowest)."""
        s1, t1, s2, t2 = self.s1, self.t1, self.s2, self.t2
        if s2 <= t1 <= t2:
            return 1
        if t2 <= t1:
            return 2
        return 3

    def reduced(self):
        """Lag and lengths ``(x, u1, u2) = (s2 - s1, t1 - s1, t2 - s2)``."""
        return self.s2 - self.s1, self.t1 - self.s1, self.t2 - self.s2


@dataclass(frozen=True)
class ChaosKernelSpec:
    """Kernel of the chaos component of order ``2q - 1`` at regularisation ``eps``."""

    q: int
    eps: float
    model: HurstModel

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise DomainError(f"chaos index q must be an integer >= 1, got {self.q!r}")
        if not self.eps > 0:
            raise DomainError(f"eps must be positive, got {self.eps!r}")

    @property
    def order(self):
        return 2 * self.q - 1

    @property
    def beta_q(self):
        return beta_q(self.q)

    @property
    def scaling_exponent_alpha(self):
        return 1.5 - 1.0 / self.model.H

    @property
    def scaling_exponent_chaos(self):
        return 1.0 - 0.75 / self.model.H


def beta_q(q):
    """``1 / (2**(q - 1/2) (q-1)! sqrt(pi))``."""
    return 1.0 / (2.0 ** (q - 0.5) * math.factorial(q - 1) * math.sqrt(math.pi))


def _nonneg(*arrays):
    for a in arrays:
        if np.any(np.asarray(a) < 0):
            raise DomainError("times, lags and lengths must be nonnegative")


def covariance(model, t, s):
    """``E[B_t B_s] = (t^2H + s^2H - |t - s|^2H) / 2``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    _nonneg(t, s)
    h2 = 2.0 * model.H
    return (0.5 * (t**h2 + s**h2 - np.abs(t - s) ** h2))[()]


def first_difference(x, h, H):
    """``F(x + h) - F(x)`` for ``F(t) = t**(2H) / 2`` without cancellation."""
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    h2 = 2.0 * H
    # for h > x the plain difference does not cancel
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        near = 0.5 * x**h2 * np.expm1(h2 * np.log1p(h / x))
    far = 0.5 * ((x + h) ** h2 - x**h2)
    return np.where(h <= x, near, far)[()]


def mixed_difference(b, a, c, H):
    """``F(b+a+c) - F(b+a) - F(b+c) + F(b)`` for ``F(t) = t**(2H) / 2``.

    Equals ``H(2H-1) a c  int int (b + a v1 + c v2)^(2H-2) dv1 dv2`` and is
    symmetric in ``(a, c)``.  When the shorter length is small against ``b``
    the value is the integral over ``y in [0, m]`` of
    ``F'(b+y+M) - F'(b+y)``, done by 8-point Gauss-Legendre (the integrand
    is analytic there); otherwise the difference of two first differences is
    already well conditioned.
    """
    b, a, c = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (b, a, c)))
    m = np.minimum(a, c)
    M = np.maximum(a, c)
    hm1 = 2.0 * H - 1.0
    small = (m <= 0.5 * b) & (b > 0)
    out = np.empty(b.shape)
    if np.any(small):
        bs, ms, Ms = b[small], m[small], M[small]
        y = 0.5 * ms[..., None] * (_GL8_X + 1.0)
        base = bs[..., None] + y
        f = H * base**hm1 * np.expm1(hm1 * np.log1p(Ms[..., None] / base))
        out[small] = 0.5 * ms * (f @ _GL8_W)
    big = ~small
    if np.any(big):
        bb, mb, Mb = b[big], m[big], M[big]
        out[big] = first_difference(bb + Mb, mb, H) - first_difference(bb, mb, H)
    return out


def region_sigma(region, a, b, c, H):
    """``(Sigma11, Sigma22, Sigma12)`` in the gap coordinates of region S_i.

    S1 (overlap, s1<=s2<=t1<=t2): a = s2-s1, b = t1-s2, c = t2-t1.
    S2 (nested,  s1<=s2<=t2<=t1): a = s2-s1, b = t2-s2, c = t1-t2.
    S3 (disjoint, s1<=t1<=s2<=t2): a = t1-s1, b = s2-t1, c = t2-s2.
    Every Sigma12 is assembled from nonnegative pieces.
    """
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    h2 = 2.0 * H
    if region == 1:
        s12 = mixed_difference(b, a, c, H) + first_difference(a, b, H) + first_difference(c, b, H)
        return (a + b) ** h2, (b + c) ** h2, s12
    if region == 2:
        s12 = first_difference(a, b, H) + first_difference(c, b, H)
        return (a + b + c) ** h2, b**h2, s12
    if region == 3:
        return a**h2, c**h2, mixed_difference(b, a, c, H)
    raise DomainError(f"region must be 1, 2 or 3, got {region!r}")


def _adjacent_cov(x, y, H):
    """Covariance of increments over adjacent intervals of lengths ``x``, ``y``."""
    big = x >= y
    return np.where(
        big,
        first_difference(x, y, H) - 0.5 * y ** (2 * H),
        first_difference(y, x, H) - 0.5 * x ** (2 * H),
    )


def region_det(region, a, b, c, H):
    """``Sigma11 Sigma22 - Sigma12^2`` without cancellation.

    With ``U, V, W`` the increments over consecutive gaps ``a, b, c`` the
    determinant is unchanged by subtracting one variable from the other, so
    S2 uses ``(U+W, V)`` and S3 uses ``(U, W)``.  S1 takes, node by node,
    whichever of ``(U+V, V+W)`` and ``(U+V, W-U)`` is less correlated.
    """
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    h2 = 2.0 * H
    u, v, w = a**h2, b**h2, c**h2
    d = mixed_difference(b, a, c, H)
    if region == 1:
        s11, s22, s12 = region_sigma(1, a, b, c, H)
        cov = d + _adjacent_cov(b, c, H) - u - _adjacent_cov(a, b, H)
        var = u + w - 2 * d
        direct = s12 * s12 * var < cov * cov * s22
        return np.where(direct, s11 * s22 - s12 * s12, s11 * var - cov * cov)
    if region == 2:
        cov = _adjacent_cov(a, b, H) + _adjacent_cov(c, b, H)
        return (u + w + 2 * d) * v - cov * cov
    if region == 3:
        return u * w - d * d
    raise DomainError(f"region must be 1, 2 or 3, got {region!r}")


def mu_direct(model, x, u1, u2):
    """Literal four-term formula for mu; loses accuracy for disparate lengths."""
    x, u1, u2 = (np.asarray(v, dtype=float) for v in (x, u1, u2))
    h2 = 2.0 * model.H
    return (0.5 * ((x + u2) ** h2 - np.abs(x + u2 - u1) ** h2 - x**h2 + np.abs(x - u1) ** h2))[()]


def mu(model, x, u1, u2):
    """``E[B_{u1} (B_{x+u2} - B_x)]`` for lag ``x >= 0`` and lengths ``u1, u2``."""
    x, u1, u2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, u1, u2)))
    _nonneg(x, u1, u2)
    H = model.H
    out = np.empty(x.shape)
    disjoint = x >= u1
    nested = ~disjoint & (x + u2 <= u1)
    overlap = ~disjoint & ~nested
    if np.any(disjoint):
        out[disjoint] = region_sigma(3, u1[disjoint], x[disjoint] - u1[disjoint], u2[disjoint], H)[2]
    if np.any(nested):
        xn, un1, un2 = x[nested], u1[nested], u2[nested]
        out[nested] = region_sigma(2, xn, un2, un1 - xn - un2, H)[2]
    if np.any(overlap):
        xo, uo1, uo2 = x[overlap], u1[overlap], u2[overlap]
        out[overlap] = region_sigma(1, xo, uo1 - xo, xo + uo2 - uo1, H)[2]
    return out[()]


def increment_cross_cov(model, pair):
    """``E[(B_t1 - B_s1)(B_t2 - B_s2)]``."""
    return float(mu(model, *pair.reduced()))


def sigma_matrix(model, pair):
    """Covariance matrix of the two increments of ``pair``."""
    h2 = 2.0 * model.H
    s11 = (pair.t1 - pair.s1) ** h2
    s22 = (pair.t2 - pair.s2) ** h2
    s12 = increment_cross_cov(model, pair)
    return np.array([[s11, s12], [s12, s22]])


def g_function(spec, x, u1, u2, eps_override=None):
    """``(eps + u1^2H)^(-q-1/2) (eps + u2^2H)^(-q-1/2) mu(x, u1, u2)^(2q-1)``.

    ``eps_override`` replaces ``spec.eps`` and may be 0.
    """
    eps = spec.eps if eps_override is None else eps_override
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    x, u1, u2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, u1, u2)))
    if eps == 0 and (np.any(u1 == 0) or np.any(u2 == 0)):
        raise SingularityError("G with eps = 0 is singular at zero length")
    H, q = spec.model.H, spec.q
    p = q + 0.5
    m = mu(spec.model, x, u1, u2)
    return ((eps + u1 ** (2 * H)) ** -p * (eps + u2 ** (2 * H)) ** -p * m ** (2 * q - 1))[()]


def monotonicity_constant(H, q):
    """Constant K bounding ``G(v) <= K G(w)`` for ``v <= w <= v + 1`` at eps = 1.

    K is the squared supremum over ``v >= 0`` of
    ``((1 + (v+1)^2H) / (1 + v^2H))^(q+1/2)``.
    """
    h2 = 2.0 * H

    def neg_ratio(v):
        return -(1.0 + (v + 1.0) ** h2) / (1.0 + v**h2)

    grid = np.concatenate([[0.0], np.logspace(-6, 6, 400)])
    i = int(np.argmin(neg_ratio(grid)))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    best = -neg_ratio(grid[i])
    if hi > lo:
        res = optimize.minimize_scalar(neg_ratio, bounds=(lo, hi), method="bounded")
        best = max(best, -res.fun)
    return best ** (2.0 * q + 1.0)


@dataclass(frozen=True)
class NondeterminismReport:
    config_class: str
    n_pairs: int
    min_ratio: float
    min_ratio_secondary: float
    violations: int
    delta_estimate: float

    @property
    def positive(self):
        return self.violations == 0 and self.min_ratio > 0


_CLASSES = ("nested", "disjoint", "overlap")


def local_nondeterminism_check(model, pairs, config_class):
    """Scan ``det(Sigma)`` against the local nondeterminism lower bounds.

    ``pairs`` is an ``(N, 4)`` array of ``(s1, t1, s2, t2)`` rows or a sequence
    of :class:`IncrementPair`.  The primary ratio is
    ``det / ((t1-s1)^2H (t2-s2)^2H)``.  For the ``overlap`` class
    (s1 < s2 < t1 < t2) the secondary ratio
    ``det / ((a+b)^2H c^2H + (b+c)^2H a^2H)`` with ``a = s2-s1, b = t1-s2,
    c = t2-t1`` is reported as well.  The best constant is estimated as the
    observed minimum; no specific value is asserted.
    """
    if config_class not in _CLASSES:
        raise DomainError(f"config_class must be one of {_CLASSES}")
    arr = np.array(
        [(p.s1, p.t1, p.s2, p.t2) if isinstance(p, IncrementPair) else tuple(p) for p in pairs],
        dtype=float,
    )
    s1, t1, s2, t2 = arr.T
    if config_class == "nested":
        ok = (s1 < s2) & (s2 < t2) & (t2 < t1)
        reg, a, b, c = 2, s2 - s1, t2 - s2, t1 - t2
    elif config_class == "disjoint":
        ok = (s1 < t1) & (t1 < s2) & (s2 < t2)
        reg, a, b, c = 3, t1 - s1, s2 - t1, t2 - s2
    else:
        ok = (s1 < s2) & (s2 < t1) & (t1 < t2)
        reg, a, b, c = 1, s2 - s1, t1 - s2, t2 - t1
    if not np.all(ok):
        raise DomainError(f"{int(np.sum(~ok))} pairs are not in the {config_class} configuration")
    H = model.H
    det = region_det(reg, a, b, c, H)
    ratio = det / ((t1 - s1) ** (2 * H) * (t2 - s2) ** (2 * H))
    secondary = np.nan
    if config_class == "overlap":
        h2 = 2 * H
        sec = det / ((a + b) ** h2 * c**h2 + (b + c) ** h2 * a**h2)
        secondary = float(np.min(sec))
    violations = int(np.sum(ratio <= 0))
    if config_class == "overlap":
        violations += int(np.sum(sec <= 0))
    return NondeterminismReport(
        config_class=config_class,
        n_pairs=len(arr),
        min_ratio=float(np.min(ratio)),
        min_ratio_secondary=secondary,
        violations=violations,
        delta_estimate=float(np.nanmin([np.min(ratio), secondary])),
    )
