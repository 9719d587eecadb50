import math

import numpy as np
import pytest
from numpy.polynomial import hermite_e
from scipy import integrate, stats

from fbm_dslt.errors import CriticalHurstError, DomainError, HurstWindowError
from fbm_dslt.fbm_model import ChaosKernelSpec, HurstModel, mu_direct
from fbm_dslt.math_kernels import heat_kernel
from fbm_dslt.quadrature import (
    QuadratureResult,
    chaos_prefactor,
    constants_table,
    exact_alpha_variance,
    exact_chaos_cross_moment,
    exact_chaos_l2_distance,
    exact_chaos_variance,
    exact_first_chaos_variance,
    gaussian_pair_moment,
    graded_rule,
    pair_power_integral,
    sigma_q_bar_squared,
    sigma_q_squared,
    sigma_squared,
    sigma_squared_via_lemma,
    simplex_rule,
    write_constants_json,
)

M07 = HurstModel(0.7)


# --- independent 3-D oracle --------------------------------------------------
#
# E[F(X) F(Y)] summed over pairs of intervals, written in lag/length
# coordinates (x, u1, u2) and split along the kinks x = u1 and x + u2 = u1 so
# each piece is smooth.  Sigma12 uses the literal four-term formula.


def _pieces(H, pair_fn):
    m = HurstModel(H)

    def g(x, u1, u2):
        s11, s22 = u1 ** (2 * H), u2 ** (2 * H)
        return pair_fn(s11, s22, mu_direct(m, x, u1, u2))

    def disjoint(p):
        x, s, v = p.T
        u1, u2 = x * s, (1 - x) * v
        return g(x, u1, u2) * (1 - x) * (1 - v) * x * (1 - x)

    def nested(p):
        u1, s, v = p.T
        x = u1 * s
        u2 = (u1 - x) * v
        return g(x, u1, u2) * (1 - u1) * u1 * (u1 - x)

    def overlap(p):
        x, v, s = p.T
        u2 = (1 - x) * v
        u1 = x + u2 * s
        return g(x, u1, u2) * (1 - x - u2) * (1 - x) * u2

    return {1: overlap, 2: nested, 3: disjoint}


def _cubature_oracle(H, pair_fn, rtol):
    out = {}
    for region, f in _pieces(H, pair_fn).items():
        res = integrate.cubature(f, [0, 0, 0], [1, 1, 1], rtol=rtol, atol=0, max_subdivisions=100_000)
        assert res.status == "converged"
        out[region] = 2 * res.estimate
    return out


def test_alpha_variance_against_cubature_oracle():
    eps = 1e-2

    def pair(s11, s22, s12):
        det = (eps + s11) * (eps + s22) - s12 * s12
        return det**-1.5 * s12 / (2 * math.pi)

    oracle = _cubature_oracle(0.7, pair, 1e-5)
    v1, v2, v3, total = exact_alpha_variance(M07, eps)
    assert total.converged
    for got, region in ((v1, 1), (v2, 2), (v3, 3)):
        assert got.value == pytest.approx(oracle[region], rel=1e-4)
    assert total.value == pytest.approx(sum(oracle.values()), rel=1e-4)


def test_chaos_variance_against_cubature_oracle():
    eps, q = 1e-2, 2
    p = q + 0.5
    c = chaos_prefactor(q) / 2

    def pair(s11, s22, s12):
        return c * (eps + s11) ** -p * (eps + s22) ** -p * s12 ** (2 * q - 1)

    oracle = _cubature_oracle(0.7, pair, 1e-5)
    total, parts = exact_chaos_variance(ChaosKernelSpec(q, eps, M07), by_region=True)
    for region in (1, 2, 3):
        assert parts[region].value == pytest.approx(oracle[region], rel=1e-4)
    assert total.value == pytest.approx(sum(oracle.values()), rel=1e-4)


# --- closed-form constants ---------------------------------------------------


@pytest.mark.parametrize("H", [0.68, 0.7, 0.75, 0.8, 0.9, 0.99])
def test_sigma_squared_routes_agree(H):
    m = HurstModel(H)
    assert sigma_squared(m) == pytest.approx(sigma_squared_via_lemma(m), rel=1e-12)


def test_sigma_squared_regression_and_scaling():
    assert sigma_squared(M07) == pytest.approx(14.770145785201297, rel=1e-12)
    for T in (0.5, 2.0, 7.0):
        assert sigma_squared(HurstModel(0.8, T)) == pytest.approx(T**1.6 * sigma_squared(HurstModel(0.8)), rel=1e-12)


def test_sigma_squared_blows_up_toward_two_thirds():
    hs = np.linspace(0.67, 0.99, 33)
    vals = np.array([sigma_squared(HurstModel(h)) for h in hs])
    assert np.all(np.isfinite(vals)) and np.all(vals > 0)
    assert vals[0] > 10 * vals[-1]


def test_sigma_squared_guards():
    with pytest.raises(HurstWindowError):
        sigma_squared(HurstModel(0.6))
    with pytest.raises(CriticalHurstError):
        sigma_squared(HurstModel(2 / 3))


def test_pair_power_integral_against_quad():
    # nu = 2 - 3/(2H) lies in (0, 1/2) on the window where this is used
    cases = [(1.0, 1.0, 0.3, 2.5), (0.2, 5.0, 0.125, 2.5), (3.0, 1e-3, 0.4, 3.5), (1e-4, 2.0, 0.05, 2.5)]
    for A, B, nu, p in cases:
        f = lambda t: t ** (nu - 1) * (t + A) ** -p * (t + B) ** -p  # noqa: E731
        brk = sorted({min(A, B), max(A, B)})
        val = 0.0
        lo = 0.0
        for b in brk + [np.inf]:
            part, _ = integrate.quad(f, lo, b, epsabs=0, epsrel=1e-12, limit=500)
            val += part
            lo = b
        assert pair_power_integral(A, B, nu, p) == pytest.approx(val, rel=1e-9)
        assert pair_power_integral(B, A, nu, p) == pytest.approx(pair_power_integral(A, B, nu, p), rel=1e-13)


def _gauss_hermite_pair_moment(theta, sig, nodes=24):
    # nodes are placed by the covariance of the combined Gaussian; the full
    # integrand is evaluated numerically and divided by the proposal density
    z, w = hermite_e.hermegauss(nodes)
    w = w / math.sqrt(2 * math.pi)
    prop = np.linalg.inv(np.linalg.inv(sig) + np.eye(2) / theta)
    Z = np.stack(np.meshgrid(z, z, indexing="ij"), -1).reshape(-1, 2)
    X = Z @ np.linalg.cholesky(prop).T
    f = X[:, 0] * X[:, 1] * stats.multivariate_normal(cov=sig).pdf(X)
    f = f * heat_kernel(theta, X[:, 0]) * heat_kernel(theta, X[:, 1])
    return np.sum(np.outer(w, w).ravel() * f / stats.multivariate_normal(cov=prop).pdf(X))


def test_gaussian_pair_moment_identity():
    rng = np.random.default_rng(0)
    for _ in range(100):
        A = rng.normal(size=(2, 2))
        S = A @ A.T + 1e-3 * np.eye(2)
        for theta in (0.1, 1.0):
            assert gaussian_pair_moment(theta, S) == pytest.approx(_gauss_hermite_pair_moment(theta, S), rel=1e-8)


# --- rules -------------------------------------------------------------------


def test_graded_rule_integrates_endpoint_singularity():
    x, xc, w = graded_rule(0.0, 1.0, 10, 30, 0.25, complement=True)
    np.testing.assert_allclose(x + xc, 1.0, rtol=0, atol=1e-15)
    assert np.sum(w) == pytest.approx(1.0, rel=1e-14)
    # int_0^1 x^-0.5 (1 - x)^-0.3 dx = B(0.5, 0.7)
    from scipy.special import beta

    assert np.sum(w * x**-0.5 * xc**-0.3) == pytest.approx(beta(0.5, 0.7), rel=1e-8)


@pytest.mark.parametrize("apex", ["a", "b", "c"])
@pytest.mark.parametrize("power,rel", [(1, 1e-12), (3, 1e-7)])
def test_simplex_rule(apex, power, rel):
    a, b, c, w = simplex_rule(10, 8, 0.25, apex=apex, power=power)
    np.testing.assert_allclose(a + b + c, 1.0, atol=1e-14)
    assert np.sum(w) == pytest.approx(0.5, rel=rel)
    # Dirichlet moment: int a b^2 over the simplex = 1! 2! / 5!
    assert np.sum(w * a * b**2) == pytest.approx(2 / 120, rel=rel)


# --- finite-eps moments ------------------------------------------------------


def test_reproducible_within_error_estimate():
    coarse = exact_alpha_variance(M07, 1e-3, rtol=1e-5)[3]
    fine = exact_alpha_variance(M07, 1e-3, rtol=5e-6)[3]
    assert coarse.converged and fine.converged
    assert abs(coarse.value - fine.value) <= 2 * max(coarse.abs_err_est, 1e-5 * abs(coarse.value))


def test_cross_moment_equal_eps_is_variance():
    spec = ChaosKernelSpec(2, 1e-2, M07)
    var = exact_chaos_variance(spec)
    cross = exact_chaos_cross_moment(M07, 2, 1e-2, 1e-2)
    assert cross.value == pytest.approx(var.value, rel=1e-10)


def test_cross_moment_cauchy_schwarz_and_l2():
    e1, e2 = 1e-1, 1e-2
    v1 = exact_chaos_variance(ChaosKernelSpec(2, e1, M07)).value
    v2 = exact_chaos_variance(ChaosKernelSpec(2, e2, M07)).value
    cross = exact_chaos_cross_moment(M07, 2, e1, e2)
    assert 0 < cross.value <= math.sqrt(v1 * v2)
    assert exact_chaos_cross_moment(M07, 2, e2, e1).value == pytest.approx(cross.value, rel=1e-12)
    d = exact_chaos_l2_distance(M07, 2, e1, e2)
    assert d.converged
    assert d.value == pytest.approx(v1 + v2 - 2 * cross.value, rel=1e-12)
    assert d.value > 0


def test_second_moments_grow_as_eps_shrinks():
    alpha = [exact_alpha_variance(M07, e, 1e-5)[3].value for e in (1e-1, 1e-2, 1e-3)]
    first = [exact_first_chaos_variance(M07, e, 1e-5).value for e in (1e-1, 1e-2, 1e-3)]
    third = [exact_chaos_variance(ChaosKernelSpec(2, e, M07), 1e-5).value for e in (1e-1, 1e-2, 1e-3)]
    for seq in (alpha, first, third):
        assert seq[0] < seq[1] < seq[2]
    # the first chaos is one component of alpha
    assert all(f < a for f, a in zip(first, alpha))


def test_first_chaos_is_q1_chaos_variance():
    a = exact_first_chaos_variance(M07, 1e-2)
    b = exact_chaos_variance(ChaosKernelSpec(1, 1e-2, M07))
    assert a.value == pytest.approx(b.value, rel=1e-10)
    assert a.value > 0


def test_eps_guard():
    with pytest.raises(DomainError):
        exact_alpha_variance(M07, 0.0)


# --- eps -> 0 constants ------------------------------------------------------


def test_sigma_bar_matches_extrapolated_chaos_variance():
    # E[J(eps)^2] = sigma_bar^2 - C eps^kappa + ..., kappa = (3 - 4H) / (2H);
    # one Richardson step from two tiny eps recovers the limit
    spec = ChaosKernelSpec(2, 1.0, M07)
    bar = sigma_q_bar_squared(spec)
    assert bar.converged
    e1, e2 = 1e-12, 1e-16
    v1 = exact_chaos_variance(ChaosKernelSpec(2, e1, M07), 1e-7).value
    v2 = exact_chaos_variance(ChaosKernelSpec(2, e2, M07), 1e-7).value
    r = (e2 / e1) ** ((3 - 4 * 0.7) / 1.4)
    assert (v2 - r * v1) / (1 - r) == pytest.approx(bar.value, rel=1e-3)
    assert v1 < v2 < bar.value


def test_sigma_bar_regression_and_growth():
    vals = [sigma_q_bar_squared(ChaosKernelSpec(2, 1.0, HurstModel(h))).value for h in (0.68, 0.7, 0.72, 0.74)]
    assert vals[1] == pytest.approx(4.158976288, rel=1e-8)
    assert all(x < y for x, y in zip(vals, vals[1:]))


def test_sigma_q_converges_and_guards():
    res = sigma_q_squared(ChaosKernelSpec(2, 1.0, HurstModel(0.8)))
    assert res.converged
    assert res.value == pytest.approx(23.58334, rel=1e-5)
    res3 = sigma_q_squared(ChaosKernelSpec(3, 1.0, HurstModel(0.85)))
    assert res3.converged and res3.value > 0
    for H in (0.7, 0.84, 0.9):
        with pytest.raises(HurstWindowError):
            sigma_q_squared(ChaosKernelSpec(2, 1.0, HurstModel(H)))
    with pytest.raises(CriticalHurstError):
        sigma_q_squared(ChaosKernelSpec(2, 1.0, HurstModel(5 / 6)))
    for H in (0.76, 0.8):
        with pytest.raises(HurstWindowError):
            sigma_q_bar_squared(ChaosKernelSpec(2, 1.0, HurstModel(H)))
    with pytest.raises(DomainError):
        sigma_q_bar_squared(ChaosKernelSpec(1, 1.0, M07))


def test_sigma_q_horizon_scaling():
    base = sigma_q_squared(ChaosKernelSpec(2, 1.0, HurstModel(0.8))).value
    assert sigma_q_squared(ChaosKernelSpec(2, 1.0, HurstModel(0.8, 3.0))).value == pytest.approx(3 * base, rel=1e-12)


# --- table -------------------------------------------------------------------


def test_constants_table(tmp_path):
    table = constants_table(0.7, eps_list=(1e-1,), q_list=(2,), rtol=1e-5)
    names = {e["name"]: e for e in table["entries"]}
    assert names["sigma_squared"]["value"] == pytest.approx(sigma_squared(M07))
    assert "error" in names["sigma_q_squared"]
    assert names["sigma_q_bar_squared"]["converged"]
    write_constants_json(tmp_path / "c.json", table)
    import json

    assert json.loads((tmp_path / "c.json").read_text()) == table


def test_result_scaling():
    r = QuadratureResult(2.0, 0.1, 10, True).scaled(-3.0)
    assert r == QuadratureResult(-6.0, 0.30000000000000004, 10, True)
