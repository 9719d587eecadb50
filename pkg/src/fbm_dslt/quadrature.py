"""Deterministic second moments of alpha_eps and its chaos components.

All the variance integrals live on ``{s1 <= t1, s2 <= t2, s1 <= s2} in [0,T]^4``.
Integrating ``s1`` out leaves the weight ``T - max(t1, t2) + s1`` and three
regions S1 (overlap), S2 (nested), S3 (disjoint).  In each region's gap
coordinates ``(a, b, c)`` the weight is ``T - (a + b + c)``, the kinks of the
covariance sit on the region boundaries, and the increment covariance is
homogeneous: ``Sigma(R w) = R^2H Sigma(w)``.  Writing ``(a, b, c) = R w`` with
``w`` on the unit simplex turns every integral into

    int_0^T (T - R) R^(2 - 4H) Phi(eps R^(-2H)) dR,

where ``Phi(theta)`` is a 2-D integral over the simplex of the integrand at
regularisation ``theta``.  The simplex is mapped to the unit square (Duffy)
and integrated with composite Gauss-Legendre on meshes graded geometrically
toward every side, which resolves the edge and vertex singularities.

The two eps -> 0 constants reduce further:

* ``sigma_bar_q^2``: the radial integral is elementary, ``Phi`` is taken at 0.
* ``sigma_q^2``: for fixed ``w`` the integral over ``R in (0, inf)`` of the
  eps = 1 integrand is a classical Beta-type integral expressible with the
  Gauss hypergeometric function, leaving a 2-D simplex integral.

Error estimates compare two successive resolutions; ``converged`` is set only
when that difference is within tolerance.
"""
from dataclasses import asdict, dataclass
import json
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .errors import DomainError, HurstWindowError
from .fbm_model import ChaosKernelSpec, HurstModel, beta_q, region_det, region_sigma
from .math_kernels import beta_fn, lemma_beta_integral

REGIONS = (1, 2, 3)
DEFAULT_RTOL = 1e-6
_MAX_LEVEL = 5


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    abs_err_est: float
    evaluations: int
    converged: bool

    def scaled(self, factor):
        return QuadratureResult(
            self.value * factor, self.abs_err_est * abs(factor), self.evaluations, self.converged
        )

    def to_dict(self):
        return asdict(self)


def _half_rule(order, levels, ratio, span):
    """Gauss nodes on ``[0, span]`` with cells graded geometrically toward 0."""
    bp = np.array([0.0] + [span * ratio**k for k in range(levels, 0, -1)] + [span])
    x, w = leggauss(order)
    left, right = bp[:-1, None], bp[1:, None]
    return (left + 0.5 * (right - left) * (x + 1.0)).ravel(), (0.5 * (right - left) * w).ravel()


def graded_rule(lo, hi, order, levels, ratio, toward=("lo", "hi"), complement=False):
    """Composite Gauss-Legendre nodes and weights on ``[lo, hi]``.

    Cells shrink geometrically by ``ratio`` toward each end named in
    ``toward``, ``levels`` of them per end.  With ``complement=True`` the
    distances ``hi - x`` are also returned, computed without cancellation.
    """
    if "lo" in toward and "hi" in toward:
        x, w = _half_rule(order, levels, ratio, 0.5)
        u = np.concatenate([x, 1.0 - x[::-1]])
        uc = np.concatenate([1.0 - x, x[::-1]])
        wu = np.concatenate([w, w[::-1]])
    elif "lo" in toward:
        u, wu = _half_rule(order, levels, ratio, 1.0)
        uc = 1.0 - u
    else:
        uc, wu = _half_rule(order, levels, ratio, 1.0)
        uc, wu = uc[::-1], wu[::-1]
        u = 1.0 - uc
    span = hi - lo
    if complement:
        return lo + span * u, span * uc, span * wu
    return lo + span * u, span * wu


def sigmoidal_rule(order, levels, ratio, power):
    """Graded rule on ``[0, 1]`` after ``x = u^g / (u^g + (1 - u)^g)``.

    The substitution flattens endpoint singularities ``x^(m - 1)`` when
    ``g m >= 1``.  Returns ``(x, 1 - x, w)`` with the complement exact.
    """
    u, uc, w = graded_rule(0.0, 1.0, order, levels, ratio, complement=True)
    if power == 1:
        return u, uc, w
    lu, luc = power * np.log(u), power * np.log(uc)
    top = np.maximum(lu, luc)
    den = np.exp(lu - top) + np.exp(luc - top)
    x = np.exp(lu - top) / den
    xc = np.exp(luc - top) / den
    dphi = power * np.exp(lu + luc - np.log(u) - np.log(uc) - 2 * top) / den**2
    return x, xc, w * dphi


def simplex_rule(order, levels, ratio, apex="a", power=1):
    """Nodes ``(a, b, c)`` with ``a + b + c = 1`` and weights for the 2-simplex.

    Duffy map collapsing the edge ``s = 1`` onto the ``apex`` vertex: with
    ``apex="a"`` it is ``a = s, b = (1 - s) t, c = (1 - s)(1 - t)``, Jacobian
    ``1 - s``.  Every edge and vertex lands on a side or corner of the unit
    square, where the mesh is graded (and optionally sigmoidally stretched,
    see :func:`sigmoidal_rule`).
    """
    s, sc, ws = sigmoidal_rule(order, levels, ratio, power)
    t, tc, wt = s, sc, ws
    top = np.repeat(s, t.size)
    left = np.outer(sc, t).ravel()
    right = np.outer(sc, tc).ravel()
    w = (np.outer(ws, wt) * sc[:, None]).ravel()
    a, b, c = {"a": (top, left, right), "b": (left, top, right), "c": (left, right, top)}[apex]
    return a, b, c, w


class _ShapeGrid:
    """Simplex nodes with the region covariances evaluated once."""

    def __init__(self, H, order, levels, ratio, regions=REGIONS, apex="a", power=1):
        a, b, c, self.w = simplex_rule(order, levels, ratio, apex, power)
        self.sig = {r: region_sigma(r, a, b, c, H) for r in regions}
        self.det = {r: region_det(r, a, b, c, H) for r in regions}
        self.size = self.w.size


def _alpha_integrand(theta, s11, s22, s12, det):
    return (theta * theta + theta * (s11 + s22) + det) ** -1.5 * s12 / math.pi


def _chaos_integrand(q, ratio=1.0):
    """Chaos integrand; ``ratio != 1`` gives the cross moment at ``(eps, ratio * eps)``.

    The cross moment is symmetrised over the two pairs because the regions
    only cover ``s1 <= s2``.
    """
    p = q + 0.5

    def f(theta, s11, s22, s12, det):
        return (theta + s11) ** -p * (theta + s22) ** -p * s12 ** (2 * q - 1)

    def cross(theta, s11, s22, s12, det):
        th2 = ratio * theta
        sym = (theta + s11) ** -p * (th2 + s22) ** -p + (th2 + s11) ** -p * (theta + s22) ** -p
        return 0.5 * sym * s12 ** (2 * q - 1)

    return f if ratio == 1.0 else cross


def _levels_for(scale, ratio, extra):
    """Number of geometric cells needed to grade from 1/2 down to ``scale``."""
    scale = max(scale, 1e-300)
    return max(2, int(math.ceil(math.log(2.0 * scale) / math.log(ratio)))) + extra


def _radial_integral(H, T, eps, integrand, level, chunk=64):
    """Per-region ``int_0^T (T-R) R^(2-4H) Phi_i(eps R^-2H) dR`` at one resolution."""
    order = 6 + 2 * level
    r_star = (eps) ** (1.0 / (2 * H)) / T
    # below r_star * 1e-4 the integrand is a vanishing power of R
    rad_levels = _levels_for(r_star * 1e-4, 0.35, 2 * level)
    R, wR = graded_rule(0.0, T, order, rad_levels, 0.35, toward=("lo",))
    theta_min = eps * T ** (-2 * H)
    shape_levels = _levels_for(theta_min ** (1.0 / (2 * H)) * 1e-4, 0.2, 2 * level)
    grid = _ShapeGrid(H, order, shape_levels, 0.2)
    radial_w = wR * (T - R) * R ** (2 - 4 * H)
    theta = eps * R ** (-2 * H)
    out = {}
    for r in REGIONS:
        s11, s22, s12 = grid.sig[r]
        det = grid.det[r]
        phi = np.empty(R.size)
        for i in range(0, R.size, chunk):
            th = theta[i : i + chunk, None]
            phi[i : i + chunk] = integrand(th, s11, s22, s12, det) @ grid.w
        out[r] = float(radial_w @ phi)
    return out, R.size * grid.size * len(REGIONS)


def _refine(compute, rtol, atol=0.0, start=0, max_level=_MAX_LEVEL):
    """Run ``compute(level)`` at increasing resolution until two agree.

    ``compute`` returns ``(dict of values, evaluations)``; the result is a dict
    of :class:`QuadratureResult` keyed like the values, all sharing the
    convergence decision of the summed value.
    """
    prev, evals = compute(start)
    for level in range(start + 1, max_level + 1):
        cur, n = compute(level)
        evals += n
        errs = {k: abs(cur[k] - prev[k]) for k in cur}
        tot, tot_err = sum(cur.values()), sum(errs.values())
        if tot_err <= max(atol, rtol * abs(tot)):
            break
        prev = cur
    ok = tot_err <= max(atol, rtol * abs(tot))
    return {k: QuadratureResult(cur[k], errs[k], evals, ok) for k in cur}


def _check_eps(eps):
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps!r}")


def sigma_squared(model):
    """Limit of ``eps^(3 - 2/H) E[alpha_eps^2]``, closed form in Beta functions."""
    H, T = model.H, model.T
    model.check_not_critical(only=(2.0 / 3.0,))
    if not 2.0 / 3.0 < H < 1.0:
        raise HurstWindowError(f"sigma^2 requires 2/3 < H < 1; got H = {H}")
    return (
        T ** (2 * H)
        * (2 * H - 1)
        / (4 * H * math.pi)
        * beta_fn(1 / H, (3 * H - 2) / (2 * H)) ** 2
        * beta_fn(2, 2 * H - 1)
    )


def sigma_squared_via_lemma(model):
    """Same constant assembled from its derivation.

    ``H(2H-1)/pi * int_0^T (T-b) b^(2H-2) db * (int_0^inf a (1 + a^2H)^(-3/2) da)^2``
    with the last integral from :func:`lemma_beta_integral`.
    """
    H, T = model.H, model.T
    if not 2.0 / 3.0 < H < 1.0:
        raise HurstWindowError(f"sigma^2 requires 2/3 < H < 1; got H = {H}")
    # int_0^T (T - b) b^(2H-2) db = T^2H int_0^1 (1 - x) x^(2H-2) dx
    time_part = T ** (2 * H) * (1.0 / (2 * H - 1) - 1.0 / (2 * H))
    space_part = lemma_beta_integral(1.0, 2 * H, 1.0, -1.5)
    return H * (2 * H - 1) / math.pi * time_part * space_part**2


def exact_alpha_variance(model, eps, rtol=DEFAULT_RTOL):
    """``(V1, V2, V3, total)`` with ``total = E[alpha_eps^2]``."""
    _check_eps(eps)
    res = _refine(lambda lv: _radial_integral(model.H, model.T, eps, _alpha_integrand, lv), rtol)
    v1, v2, v3 = res[1], res[2], res[3]
    total = QuadratureResult(
        v1.value + v2.value + v3.value,
        v1.abs_err_est + v2.abs_err_est + v3.abs_err_est,
        v1.evaluations,
        v1.converged,
    )
    return v1, v2, v3, total


def chaos_prefactor(q):
    return 2.0 * math.factorial(2 * q - 1) * beta_q(q) ** 2


def exact_chaos_variance(spec, rtol=DEFAULT_RTOL, by_region=False):
    """``E[I_{2q-1}(f_{2q-1,eps})^2]`` at ``spec.eps``."""
    _check_eps(spec.eps)
    model, q = spec.model, spec.q
    integrand = _chaos_integrand(q)
    res = _refine(lambda lv: _radial_integral(model.H, model.T, spec.eps, integrand, lv), rtol)
    c = chaos_prefactor(q)
    parts = {r: res[r].scaled(c) for r in REGIONS}
    total = QuadratureResult(
        sum(p.value for p in parts.values()),
        sum(p.abs_err_est for p in parts.values()),
        parts[1].evaluations,
        parts[1].converged,
    )
    return (total, parts) if by_region else total


def exact_chaos_cross_moment(model, q, eps1, eps2, rtol=DEFAULT_RTOL):
    """``E[I_{2q-1}(f_{2q-1,eps1}) I_{2q-1}(f_{2q-1,eps2})]``."""
    _check_eps(eps1)
    _check_eps(eps2)
    lo, hi = min(eps1, eps2), max(eps1, eps2)
    integrand = _chaos_integrand(q, ratio=hi / lo)
    res = _refine(lambda lv: _radial_integral(model.H, model.T, lo, integrand, lv), rtol)
    c = chaos_prefactor(q)
    err = sum(r.abs_err_est for r in res.values()) * c
    return QuadratureResult(sum(r.value for r in res.values()) * c, err, res[1].evaluations, res[1].converged)


def exact_chaos_l2_distance(model, q, eps1, eps2, rtol=DEFAULT_RTOL):
    """``E[(I_{2q-1}(f_{2q-1,eps1}) - I_{2q-1}(f_{2q-1,eps2}))^2]`` from three exact moments."""
    parts = [
        exact_chaos_variance(ChaosKernelSpec(q, eps1, model), rtol),
        exact_chaos_variance(ChaosKernelSpec(q, eps2, model), rtol),
        exact_chaos_cross_moment(model, q, eps1, eps2, rtol),
    ]
    value = parts[0].value + parts[1].value - 2 * parts[2].value
    err = parts[0].abs_err_est + parts[1].abs_err_est + 2 * parts[2].abs_err_est
    return QuadratureResult(
        value, err, sum(p.evaluations for p in parts), all(p.converged for p in parts)
    )


def exact_first_chaos_variance(model, eps, rtol=DEFAULT_RTOL):
    """``E[I_1(f_{1,eps})^2]``."""
    return exact_chaos_variance(ChaosKernelSpec(1, eps, model), rtol=rtol)


def _shape_integral(H, g, level, margin):
    """Per-region simplex integrals of ``g(Sigma11, Sigma22, Sigma12)``.

    ``margin`` is the smallest exponent margin of the power singularities on
    the edges and vertices; a sigmoidal substitution of order ``1 / margin``
    smooths them.  Region S3 collapses its Duffy map onto the vertex where
    both intervals shrink far apart, which is where the eps = 1 profile is
    most singular.
    """
    power = min(8.0, max(2.0, 1.0 / margin))
    order, levels = 8 + 4 * level, 6 + 3 * level

    def safe(sig):
        # nodes stretched into underflow carry no measure; they are dropped
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            f = g(*sig)
        return np.where(np.isfinite(f), f, 0.0)

    grid = _ShapeGrid(H, order, levels, 0.25, regions=(1, 2), power=power)
    out = {r: float(safe(grid.sig[r]) @ grid.w) for r in (1, 2)}
    grid3 = _ShapeGrid(H, order, levels, 0.25, regions=(3,), apex="b", power=power)
    out[3] = float(safe(grid3.sig[3]) @ grid3.w)
    return out, 3 * grid.size


def _require_q2(q):
    if int(q) != q or q < 2:
        raise DomainError(f"q must be an integer >= 2, got {q!r}")


def sigma_q_bar_squared(spec, rtol=DEFAULT_RTOL):
    """``lim_{eps->0} E[I_{2q-1}(f_{2q-1,eps})^2]`` for ``2/3 < H < 3/4``."""
    model, q = spec.model, spec.q
    _require_q2(q)
    model.check_not_critical(q)
    model.require_window(2.0 / 3.0, 0.75, "the L2 limit of the chaos components (finite by integrability of G at eps = 0)")
    H, T = model.H, model.T
    p = q + 0.5

    def g0(s11, s22, s12):
        return np.exp((2 * q - 1) * np.log(s12) - p * np.log(s11 * s22))

    # edge where one interval shrinks: Sigma12 ~ b, Sigma22 = b^2H
    margin = 2 * q - H * (2 * q + 1)
    res = _refine(lambda lv: _shape_integral(H, g0, lv, margin), rtol)
    radial = T ** (4 - 4 * H) / ((3 - 4 * H) * (4 - 4 * H))
    c = chaos_prefactor(q) * radial
    tot = sum(r.value for r in res.values()) * c
    err = sum(r.abs_err_est for r in res.values()) * c
    return QuadratureResult(tot, err, res[1].evaluations, res[1].converged)


def _log_pair_power_integral(A, B, nu, p):
    hi = np.maximum(A, B)
    lo = np.minimum(A, B)
    log_pref = -p * np.log(hi) + (nu - p) * np.log(lo) + special.betaln(nu, 2 * p - nu)
    return log_pref, special.hyp2f1(p, nu, 2 * p, 1.0 - lo / hi)


def pair_power_integral(A, B, nu, p):
    """``int_0^inf th^(nu-1) (th + A)^-p (th + B)^-p d th`` (symmetric in A, B).

    Uses ``b^-p g^(nu-p) B(nu, 2p - nu) 2F1(p, nu; 2p; 1 - g/b)`` with
    ``b = max(A, B)`` and ``g = min(A, B)`` so the argument lies in ``[0, 1)``.
    """
    log_pref, hyp = _log_pair_power_integral(np.asarray(A, float), np.asarray(B, float), nu, p)
    return np.exp(log_pref) * hyp


def sigma_q_squared(spec, rtol=DEFAULT_RTOL):
    """``2 (2q-1)! beta_q^2 T int_{R+^3} G_{1,x}(u1, u2)`` for ``3/4 < H < (4q-3)/(4q-2)``."""
    model, q = spec.model, spec.q
    _require_q2(q)
    model.check_not_critical(q)
    hi = (4.0 * q - 3.0) / (4.0 * q - 2.0)
    model.require_window(
        0.75, hi, f"sigma_q^2 (the integral of G_1 over R+^3 is finite only for 3/4 < H < {hi:.6g})"
    )
    H = model.H
    p, nu = q + 0.5, 2.0 - 1.5 / H

    def g1(s11, s22, s12):
        log_pref, hyp = _log_pair_power_integral(s11, s22, nu, p)
        return np.exp((2 * q - 1) * np.log(s12) + log_pref) * hyp / (2 * H)

    # margins: 1 - H on edges where one interval shrinks, 4q-3 - H(4q-2) at
    # the S3 vertex where both shrink far apart
    margin = min(1.0 - H, (4 * q - 3) - H * (4 * q - 2))
    res = _refine(lambda lv: _shape_integral(H, g1, lv, margin), rtol)
    c = chaos_prefactor(q) * model.T
    tot = sum(r.value for r in res.values()) * c
    err = sum(r.abs_err_est for r in res.values()) * c
    return QuadratureResult(tot, err, res[1].evaluations, res[1].converged)


def gaussian_pair_moment(theta, sigma):
    """``E[X Y p_theta(X) p_theta(Y)] = theta^2 |theta I + S|^(-3/2) S12 / (2 pi)``."""
    sigma = np.asarray(sigma, dtype=float)
    det = np.linalg.det(theta * np.eye(2) + sigma)
    return theta**2 * det**-1.5 * sigma[0, 1] / (2 * math.pi)


def constants_table(H, T=1.0, eps_list=(), q_list=(), rtol=1e-6):
    """JSON-ready table of every constant defined at ``(H, T)``.

    Constants outside their admissible window are recorded with the reason
    instead of a value.
    """
    model = HurstModel(H, T)
    table = {"H": H, "T": T, "schema": "fbm-dslt-constants/1", "entries": []}

    def add(name, q, eps, fn):
        entry = {"name": name, "q": q, "eps": eps}
        try:
            val = fn()
        except DomainError as exc:
            entry["error"] = str(exc)
        else:
            if isinstance(val, QuadratureResult):
                entry.update(val.to_dict())
            else:
                entry.update(value=float(val), abs_err_est=0.0, evaluations=0, converged=True)
        table["entries"].append(entry)

    add("sigma_squared", None, None, lambda: sigma_squared(model))
    for eps in eps_list:
        add("alpha_variance", None, eps, lambda: exact_alpha_variance(model, eps, rtol)[3])
        add("first_chaos_variance", 1, eps, lambda: exact_first_chaos_variance(model, eps, rtol))
    for q in q_list:
        spec = ChaosKernelSpec(q, 1.0, model)
        add("sigma_q_squared", q, None, lambda: sigma_q_squared(spec, rtol))
        add("sigma_q_bar_squared", q, None, lambda: sigma_q_bar_squared(spec, rtol))
        for eps in eps_list:
            add("chaos_variance", q, eps, lambda: exact_chaos_variance(ChaosKernelSpec(q, eps, model), rtol))
    return table


def write_constants_json(path, table):
    with open(path, "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
