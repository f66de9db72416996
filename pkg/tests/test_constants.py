import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lamegap.constants import (AsymptoticConstants, Lame, example_constants, gamma, gamma_alpha,
                               gamma_alpha_reflection, gap_integral, lame_row, m_alpha_tau,
                               profile_gap_integral, rest_exponent_2d, rest_exponent_hd, tilde_eps)
from lamegap.geometry import CurvilinearSquareGeometry, power_profile


@pytest.mark.parametrize("z", [0.1, 0.5, 1.0, 1.5, 2.5, 7.3, 20.0, -0.5, -1.7])
def test_gamma_matches_math(z):
    assert gamma(z) == pytest.approx(math.gamma(z), rel=1e-13)


def test_gamma_poles():
    with pytest.raises(ValueError):
        gamma(-2.0)


@given(st.floats(0.05, 30.0))
def test_gamma_recurrence(z):
    assert gamma(z + 1) == pytest.approx(z * gamma(z), rel=1e-12)


@pytest.mark.parametrize("alpha,expected", [(1.0, math.pi), (0.5, 3.627598728468436), (0.25, 5.344796660577976)])
def test_gamma_alpha_values(alpha, expected):
    assert gamma_alpha(alpha) == pytest.approx(expected, rel=1e-12)


@given(st.floats(0.01, 1.0))
def test_gamma_alpha_two_routes(alpha):
    assert gamma_alpha(alpha) == pytest.approx(gamma_alpha_reflection(alpha), rel=1e-12)


def test_m_alpha_tau_values():
    assert abs(m_alpha_tau(1.0, 1.0) - math.pi) < 1e-12
    assert m_alpha_tau(0.5, 1.0) == pytest.approx(4.836798304624581, rel=1e-12)


@given(st.floats(0.05, 0.95), st.floats(0.1, 10.0))
def test_m_alpha_tau_scaling(alpha, tau):
    ratio = m_alpha_tau(alpha, 2 * tau) / m_alpha_tau(alpha, tau)
    assert ratio == pytest.approx(2 ** (-1 / (1 + alpha)), rel=1e-12)


def test_alpha_domain():
    for bad in (0.0, -0.1, 1.2):
        with pytest.raises(ValueError):
            gamma_alpha(bad)
    with pytest.raises(ValueError):
        m_alpha_tau(0.5, 0.0)


def test_lame_row():
    np.testing.assert_array_equal(lame_row(2, Lame(1.0, 1.0)), [1.0, 3.0])
    np.testing.assert_array_equal(lame_row(3, Lame(0.0, 2.0)), [2.0, 2.0, 4.0])


@given(st.integers(2, 6), st.floats(-0.3, 5.0), st.floats(0.1, 5.0))
def test_lame_row_gap(d, lam, mu):
    row = lame_row(d, (lam, mu))
    assert row[-1] - row[0] == pytest.approx(lam + mu)


def test_lame_check():
    with pytest.raises(ValueError):
        Lame(1.0, 0.0).check()
    with pytest.raises(ValueError):
        Lame(-2.0, 1.0).check(2)
    k = Lame(1.0, 1.0).kappa3()
    assert k == pytest.approx(0.25)


def test_asymptotic_constants_bundle():
    c = AsymptoticConstants(0.5, 0.5, 1.0, 2, Lame(1.0, 1.0))
    assert c.M == pytest.approx(m_alpha_tau(0.5, 1.0))
    np.testing.assert_array_equal(c.L, [1.0, 3.0])


def test_rest_exponents():
    assert rest_exponent_2d(0.5, 0.2) == pytest.approx(0.25 / 9, abs=1e-12)
    assert rest_exponent_2d(0.5, 1.0) == pytest.approx(0.25 / 9, abs=1e-12)
    assert rest_exponent_hd(0.5, 3) == pytest.approx(0.125 / 9, abs=1e-12)
    assert rest_exponent_hd(0.5, 4) == pytest.approx(0.25 * 1.5 / 9, abs=1e-12)
    assert rest_exponent_hd(0.5, 5) == pytest.approx(0.25 / 6, abs=1e-12)
    assert rest_exponent_hd(0.5, 7) == rest_exponent_hd(0.5, 5)
    with pytest.raises(ValueError):
        rest_exponent_hd(0.5, 2)


def test_rest_exponent_2d_small_beta_branch():
    # beta/(1+a) is the minimum once beta is small enough
    assert rest_exponent_2d(0.5, 0.01) == pytest.approx(0.01 / 1.5, abs=1e-12)


@given(st.floats(0.05, 0.95))
def test_rest_exponent_2d_continuous_at_alpha(a):
    lo, hi = rest_exponent_2d(a, a * (1 - 1e-12)), rest_exponent_2d(a, a)
    assert lo == pytest.approx(hi, rel=1e-9)


def test_tilde_eps_branches():
    t = tilde_eps(0.5, 0.2)
    assert t.exponent == pytest.approx(0.2 / 1.5) and not t.has_log_factor
    t = tilde_eps(0.5, 0.5)
    assert t.exponent == pytest.approx(1 / 3) and t.has_log_factor
    t = tilde_eps(0.5, 0.9)
    assert t.exponent == pytest.approx(1 / 3) and not t.has_log_factor


def test_gap_integral_whole_line_identity():
    r = gap_integral(0.5, 1.0, 1e-6, math.inf)
    assert r.converged and abs(r.ratio - 1) < 1e-6


def test_gap_integral_unit_window():
    r6 = gap_integral(0.5, 1.0, 1e-6, 1.0)
    r9 = gap_integral(0.5, 1.0, 1e-9, 1.0)
    assert abs(r6.ratio - 1) < 1e-2
    assert abs(r9.ratio - 1) < 1e-3
    # deviation bounded by C eps^(a/(1+a)) with the same C at both eps
    c6 = abs(r6.ratio - 1) / 1e-6 ** (1 / 3)
    c9 = abs(r9.ratio - 1) / 1e-9 ** (1 / 3)
    assert c6 == pytest.approx(c9, rel=0.05)
    assert r6.ratio == pytest.approx(0.9917300686361553, rel=1e-10)


def test_gap_integral_symmetry_and_tail():
    from lamegap.quadrature import integrate

    eps = 1e-4
    full = gap_integral(0.5, 1.0, eps, 1.0).value
    half = integrate(lambda x: 1 / (eps + x**1.5), 0.0, 1.0, [1e-4, 1e-3, 1e-2, 1e-1]).value
    assert full == pytest.approx(2 * half, rel=1e-9)
    d1 = gap_integral(0.5, 1.0, 1e-4, 2.0).value - full
    d2 = gap_integral(0.5, 1.0, 1e-6, 2.0).value - gap_integral(0.5, 1.0, 1e-6, 1.0).value
    tail = 2 * 2 * (1 - 2 ** -0.5)  # 2 * integral_1^2 x^(-3/2) dx
    assert d1 == pytest.approx(tail, rel=1e-2) and d2 == pytest.approx(tail, rel=1e-3)


def test_profile_gap_integral_matches_power():
    prof = power_profile(0.5, 1.0, 0.5, 0.25, lower_curvature=0.3)
    a = profile_gap_integral(prof, 1e-5).value
    b = gap_integral(0.5, 1.0, 1e-5, 0.25).value
    assert a == pytest.approx(b, rel=1e-9)


def test_example_constants_frozen():
    g = CurvilinearSquareGeometry(1.0, 2.0, 0.5, 1e-3, 0.4)
    ec = example_constants(g, Lame(1.0, 1.0))
    assert ec.tau0 == pytest.approx(0.195262146, rel=1e-8)
    assert ec.C_star == pytest.approx(-1.77037, rel=1e-4)
    np.testing.assert_allclose(ec.K_star, [-34.16, -98.94], rtol=1e-3)
    np.testing.assert_allclose(ec.G_star, [-2.377, -2.295], rtol=1e-3)
    assert ec.M == pytest.approx(14.3707, rel=1e-4)
    assert np.all(np.sign(ec.G_star) == np.sign(ec.K_star))
    r0a = 0.5 * ec.tau0 * 0.4**0.5
    assert ec.K_star[0] - ec.K_star[1] == pytest.approx(2 * (1.0 + 1.0) / r0a, rel=1e-12)


def test_example_integrand_bounded():
    g = CurvilinearSquareGeometry(1.0, 2.0, 0.5, 1e-3, 0.4)
    x = np.geomspace(1e-4, 1e-2, 30)
    diff = g.profile.difference(x)
    vals = np.abs(1 / diff - 1 / (g.tau * x**1.5))
    assert np.all(np.isfinite(vals)) and vals.max() < 10.0
