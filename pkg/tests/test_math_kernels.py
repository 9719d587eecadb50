import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import hermite_e
from scipy import integrate

from fbm_dslt.errors import DivergentIntegralError, DomainError
from fbm_dslt.math_kernels import (
    HermiteEvaluator,
    beta_fn,
    heat_kernel,
    heat_kernel_deriv,
    hermite,
    lemma_beta_integral,
    norm_cdf,
    norm_pdf,
    norm_ppf,
)


def test_hermite_low_degrees():
    assert hermite(0, 5.3) == 1.0
    assert hermite(1, -2.5) == -2.5
    assert hermite(3, 2.0) == 2.0


@pytest.mark.parametrize("q", range(12))
def test_hermite_matches_numpy_hermite_e(q):
    x = np.linspace(-4, 4, 41)
    coef = np.zeros(q + 1)
    coef[q] = 1.0
    np.testing.assert_allclose(hermite(q, x), hermite_e.hermeval(x, coef), rtol=1e-12, atol=1e-9)


def test_hermite_recurrence():
    x = np.arange(-3.0, 4.0)
    for q in range(1, 16):
        resid = hermite(q + 1, x) - x * hermite(q, x) + q * hermite(q - 1, x)
        np.testing.assert_array_equal(resid, 0.0)


def test_hermite_orthogonality():
    # Gauss-Hermite_e nodes integrate against exp(-x^2/2); normalise to phi.
    z, w = hermite_e.hermegauss(40)
    w = w / math.sqrt(2 * math.pi)
    table = HermiteEvaluator(7).table(z)
    gram = (table * w) @ table.T
    expected = np.diag([math.factorial(k) for k in range(8)]).astype(float)
    np.testing.assert_allclose(gram, expected, atol=1e-9)


def test_evaluator_agrees_with_function():
    ev = HermiteEvaluator(9)
    for q in range(10):
        assert ev(q, 1.7) == pytest.approx(hermite(q, 1.7), rel=1e-14)
    with pytest.raises(DomainError):
        ev(10, 0.0)


def test_hermite_rejects_bad_input():
    with pytest.raises(DomainError):
        hermite(2, np.inf)
    with pytest.raises(DomainError):
        hermite(-1, 0.0)


def test_heat_kernel_values():
    assert heat_kernel(1.0, 0.0) == pytest.approx(0.3989422804014327, rel=1e-15)
    assert heat_kernel(0.25, 0.5) == pytest.approx(math.exp(-0.5) / math.sqrt(0.5 * math.pi), rel=1e-14)
    x = np.linspace(-3, 3, 13)
    np.testing.assert_array_equal(heat_kernel(0.3, x), heat_kernel(0.3, -x))


@pytest.mark.parametrize("eps", [1e-4, 1e-2, 1.0])
def test_heat_kernel_mass(eps):
    r = 20 * math.sqrt(eps)
    x = np.linspace(-r, r, 4001)
    assert abs(integrate.simpson(heat_kernel(eps, x), x=x) - 1.0) < 1e-10


def test_heat_kernel_deriv():
    assert heat_kernel_deriv(0.7, 0.0) == 0.0
    assert heat_kernel_deriv(1.0, 1.0) == pytest.approx(-math.exp(-0.5) / math.sqrt(2 * math.pi), rel=1e-14)
    h = 1e-5
    for eps, x in [(0.1, 0.2), (1.0, -1.3), (2.5, 0.7)]:
        fd = (heat_kernel(eps, x + h) - heat_kernel(eps, x - h)) / (2 * h)
        assert fd == pytest.approx(heat_kernel_deriv(eps, x), rel=1e-8)


@pytest.mark.parametrize("fn", [heat_kernel, heat_kernel_deriv])
def test_heat_kernel_rejects_nonpositive_variance(fn):
    with pytest.raises(DomainError):
        fn(0.0, 1.0)
    with pytest.raises(DomainError):
        fn(-1.0, 1.0)


def test_beta_fn():
    assert beta_fn(1.0, 1.0) == pytest.approx(1.0, rel=1e-15)
    # B(2, b) = 1 / (b (b + 1))
    assert beta_fn(2.0, 0.4) == pytest.approx(1 / (0.4 * 1.4), rel=1e-13)
    # large arguments stay finite
    assert np.isfinite(beta_fn(300.0, 400.0))
    with pytest.raises(DomainError):
        beta_fn(0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(
    st.floats(0.05, 30.0),
    st.floats(0.05, 30.0),
    st.floats(0.05, 30.0),
)
def test_beta_symmetry_and_gamma_ratio_identity(a, b, c):
    assert beta_fn(a, b) == pytest.approx(beta_fn(b, a), rel=1e-14)
    lhs = beta_fn(a, b) * beta_fn(a + b, c)
    rhs = beta_fn(b, c) * beta_fn(a, b + c)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_lemma_beta_integral_elementary():
    assert lemma_beta_integral(1.0, 1.0, 0.0, -2.0) == pytest.approx(1.0, rel=1e-14)
    assert lemma_beta_integral(2.0, 1.0, 0.0, -2.0) == pytest.approx(0.5, rel=1e-14)


def _brute_force(c, beta, alpha, gamma):
    def f(a):
        return a**alpha * (c + a**beta) ** gamma

    head, _ = integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-11, limit=200)
    tail, _ = integrate.quad(f, 1, np.inf, epsabs=0, epsrel=1e-11, limit=200)
    return head + tail


def test_lemma_beta_integral_tail_example():
    assert lemma_beta_integral(1.0, 1.4, 1.0, -1.5) == pytest.approx(_brute_force(1.0, 1.4, 1.0, -1.5), rel=1e-8)


def test_lemma_beta_integral_random_tuples():
    rng = np.random.default_rng(11)
    for _ in range(20):
        c = rng.uniform(0.2, 5)
        beta = rng.uniform(0.5, 3)
        alpha = rng.uniform(-0.5, 2)
        # keep the tail exponent in [-2.5, -0.5] so the integral converges
        gamma = -(1 + alpha + rng.uniform(0.5, 2.5)) / beta
        assert lemma_beta_integral(c, beta, alpha, gamma) == pytest.approx(
            _brute_force(c, beta, alpha, gamma), rel=1e-8
        )


def test_lemma_beta_integral_divergence():
    with pytest.raises(DivergentIntegralError):
        lemma_beta_integral(1.0, 1.0, 0.0, -1.0)
    with pytest.raises(DivergentIntegralError):
        lemma_beta_integral(1.0, 1.0, -1.0, -3.0)
    with pytest.raises(DomainError):
        lemma_beta_integral(0.0, 1.0, 0.0, -2.0)


def test_normal_utilities():
    assert norm_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert norm_cdf(0.0) == 0.5
    p = np.array([0.01, 0.3, 0.5, 0.975])
    np.testing.assert_allclose(norm_cdf(norm_ppf(p)), p, rtol=1e-13)
