import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lamegap.auxiliary import BoundaryField, ubar
from lamegap.concentration import (DivergentEntryError, HypothesisError, IndefiniteSystemError, StarredData,
                                   a_rate, asymptotic_gradient_2d, asymptotic_gradient_hd, blowup_matrices,
                                   calibrate_bounds, coefficients_2d, coefficients_hd, example_asymptotic,
                                   estimate_starred, fit_divergent, fit_entry, fitted_exponent, gradient_bounds,
                                   q_rate, solve_system)
from lamegap.constants import Lame, example_constants, m_alpha_tau
from lamegap.geometry import CurvilinearSquareGeometry, GapGeometry, power_profile

LAME = Lame(1.0, 1.0)
NAN = np.nan


def starred_2d(a13=2.0, a23=0.0, a33=5.0, q=(3.0, 4.0, 1.5)):
    A = np.array([[NAN, NAN, a13], [NAN, NAN, a23], [a13, a23, a33]])
    return StarredData(A, np.array(q, float), 2)


def spd(rng, n):
    M = rng.normal(size=(n, n))
    return M @ M.T + n * np.eye(n)


# ---------------------------------------------------------------- linear system

def test_solve_system_exact():
    rng = np.random.default_rng(0)
    A = spd(rng, 3)
    Y = rng.normal(size=3)
    sy = solve_system(A, Y, 1e-3)
    assert np.linalg.norm(A @ sy.C - Y) <= 1e-12 * np.linalg.norm(Y)
    assert sy.residual < 1e-12 and sy.min_eigenvalue() > 0 and sy.size == 3


def test_solve_system_rejects():
    with pytest.raises(IndefiniteSystemError):
        solve_system([[1.0, 2.0], [0.0, 1.0]], [1.0, 1.0])
    with pytest.raises(IndefiniteSystemError):
        solve_system([[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])


def test_zero_data_system():
    sy = solve_system(np.eye(3) * 2.0, np.zeros(3))
    assert not np.any(sy.C)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.sampled_from([3, 6]))
def test_system_identity(seed, n):
    rng = np.random.default_rng(seed)
    A = spd(rng, n)
    Y = rng.normal(size=n)
    sy = solve_system(A, Y)
    np.testing.assert_allclose(sy.C @ A, Y, rtol=1e-10, atol=1e-10 * np.abs(Y).max())


# ---------------------------------------------------------------- rates and fits

def test_rates_default_alpha():
    assert q_rate(0.5, 2, 1) == pytest.approx(0.0625)
    assert q_rate(0.5, 2, 3) == pytest.approx(0.375)
    assert a_rate(0.5, 2, 3, 3) == pytest.approx(0.125)
    assert a_rate(0.5, 2, 1, 3) == pytest.approx(0.25 / (2 * 2 * 2.25))
    assert a_rate(0.5, 2, 1, 1) is None and a_rate(0.5, 2, 1, 2) is None
    assert a_rate(0.5, 3, 1, 2) == pytest.approx(0.25 / (4 * 2.25))
    assert a_rate(0.5, 4, 1, 2) == pytest.approx(0.25 / (4 * 1.5))


def test_fit_entry_synthetic():
    eps = np.array([1e-3, 1e-4, 1e-5])
    vals = 7.0 + 2.0 * eps**0.125
    f = fit_entry("a33", eps, vals, 0.125, 7.0)
    assert f.status == "ok"
    assert f.value == pytest.approx(7.0, rel=1e-12)
    assert f.value_two_point == pytest.approx(7.0, rel=1e-12)
    assert f.stability < 1e-12


def test_fit_entry_negligible_and_rejected():
    eps = [1e-3, 1e-4, 1e-5]
    assert fit_entry("a23", eps, [1e-14, -2e-14, 0.0], 0.25, 20.0).status == "negligible"
    f = fit_entry("q2", eps, [10.0, 11.0, 10.0], 0.06, 10.0)
    assert f.status == "rejected" and "monotone" in f.note
    # wiggles below the flat tolerance are tolerated
    assert fit_entry("q2", eps, [10.0, 10.0001, 10.00005], 0.06, 10.0).status == "ok"


def test_fit_divergent_forms():
    eps = np.array([1e-3, 1e-4, 1e-5, 1e-6])
    lead = 4.8368
    v = lead * eps ** (-1 / 3) + 0.7 * np.abs(np.log(eps)) - 2.0
    f = fit_divergent("a11", eps, v, 0.5, "diagonal", lead)
    assert f.extra["leading_ratio"] == pytest.approx(1.0, rel=1e-10)
    assert f.extra["log"] == pytest.approx(0.7, rel=1e-8)
    g = fit_divergent("a12", eps, 0.3 * np.abs(np.log(eps)) + 1.0, 0.5, "offdiag")
    assert g.extra["log"] == pytest.approx(0.3)
    assert max(g.extra["per_log"]) < 1.0


def _synthetic_systems(eps_list, alpha=0.5):
    """Systems with exact pinned-rate behaviour of every convergent entry."""
    M = m_alpha_tau(alpha, 1.0)
    out = []
    for e in eps_list:
        s = e ** (-alpha / (1 + alpha))
        A = np.zeros((3, 3))
        A[0, 0] = M * s + 1.0
        A[1, 1] = 3 * M * s + 2.0
        A[0, 1] = A[1, 0] = 0.1 * abs(np.log(e))
        A[0, 2] = A[2, 0] = 19.0 + 3.0 * e ** a_rate(alpha, 2, 1, 3)
        A[2, 2] = 21.0 - 4.0 * e ** a_rate(alpha, 2, 3, 3)
        Y = np.array([16.0 + e ** q_rate(alpha, 2, 1), 15.0, 15.4 - e ** q_rate(alpha, 2, 3)])
        out.append(solve_system(A, Y, e))
    return out


def test_estimate_starred_synthetic():
    st_ = estimate_starred(_synthetic_systems([1e-4, 1e-5, 1e-6]), 0.5, 2, 1.0, LAME)
    assert st_.a(1, 3) == pytest.approx(19.0, rel=1e-10)
    assert st_.a(3, 3) == pytest.approx(21.0, rel=1e-10)
    np.testing.assert_allclose(st_.q_star, [16.0, 15.0, 15.4], rtol=1e-10)
    with pytest.raises(DivergentEntryError):
        st_.a(1, 1)
    fits = st_.provenance["fits"]
    assert fits["a11"]["extra"]["leading_ratio"] == pytest.approx(1.0, rel=1e-6)
    assert fits["a23"]["status"] == "negligible"


def test_estimate_starred_input_checks():
    sys3 = _synthetic_systems([1e-4, 1e-5, 1e-6])
    with pytest.raises(ValueError):
        estimate_starred(sys3[:2], 0.5)
    with pytest.raises(ValueError):
        estimate_starred(sys3[::-1], 0.5)


def test_starred_json_roundtrip(tmp_path):
    s = starred_2d()
    s.provenance["note"] = "x"
    s.save(tmp_path / "s.json")
    t = StarredData.load(tmp_path / "s.json")
    np.testing.assert_array_equal(np.isnan(t.a_star), np.isnan(s.a_star))
    assert t.a(1, 3) == 2.0 and t.q(2) == 4.0 and t.provenance == {"note": "x"}
    assert json.loads(s.to_json())["a_star"][0][0] is None


# ---------------------------------------------------------------- blow-up matrices

def test_blowup_2d_triangular_case():
    s = starred_2d(a13=0.0, a23=0.0)
    bm = blowup_matrices(s)
    for i in (1, 2):
        assert bm.detB[i - 1] == pytest.approx(s.q(i) * s.a(3, 3))
    assert bm.consistent


def test_blowup_2d_general():
    s = starred_2d()
    bm = blowup_matrices(s)
    assert bm.detB[0] == pytest.approx(3.0 * 5.0 - 2.0 * 1.5)
    assert not blowup_matrices(starred_2d(a33=-1.0)).consistent


def test_cramer_consistency_d3():
    rng = np.random.default_rng(5)
    A = spd(rng, 6)
    q = rng.normal(size=6)
    s = StarredData(A, q, 3)
    bm = blowup_matrices(s)
    np.testing.assert_allclose(np.array(bm.detF) / bm.detA, np.linalg.solve(A, q), rtol=1e-10)
    np.testing.assert_allclose(coefficients_hd(s), np.linalg.solve(A, q), rtol=1e-10)
    assert bm.consistent


def test_zero_q_degenerate_d3():
    s = StarredData(np.eye(6), np.zeros(6), 3)
    assert all(d == 0 for d in blowup_matrices(s).detF)
    g = GapGeometry(power_profile(0.5, dim=3, lower_curvature=0.5), 1e-3)
    with pytest.raises(HypothesisError):
        asymptotic_gradient_hd(s, g, LAME, BoundaryField.zero(3), np.array([0.0, 0.0, 5e-4]))


def test_indefinite_a_star_flagged():
    A = np.eye(6)
    A[0, 0] = -1.0
    assert not blowup_matrices(StarredData(A, np.ones(6), 3)).consistent


# ---------------------------------------------------------------- evaluators

def test_hd_identity_case():
    g = GapGeometry(power_profile(0.5, dim=3, lower_curvature=0.5), 1e-3)
    q = np.eye(6)[0]
    s = StarredData(np.eye(6), q, 3)
    phi = BoundaryField.linear(np.diag([0.0, 0.0, 1.0]), dim=3)
    x = np.array([0.0, 0.0, 4e-4])
    # e_1 makes det F_i* vanish for i >= 2, so the hypothesis check must be off
    with pytest.raises(HypothesisError):
        asymptotic_gradient_hd(s, g, LAME, phi, x)
    out = asymptotic_gradient_hd(s, g, LAME, phi, x, check=False)
    np.testing.assert_allclose(out.coefficients, q)
    from lamegap.auxiliary import ubar0
    np.testing.assert_allclose(out.gradient, ubar(g, 1, x)[1] + ubar0(g, phi, x)[1])
    # translation term carries the 1/eps factor at x' = 0
    assert ubar(g, 1, x)[1][0, 2] == pytest.approx(1e3)


def test_2d_axis_structure():
    g = GapGeometry(power_profile(0.5, lower_curvature=0.5), 1e-4)
    s = starred_2d()
    phi = BoundaryField.linear([[0.0, 1.0], [0.0, 1.0]])
    x = np.array([0.0, 3e-5])
    out = asymptotic_gradient_2d(s, g, LAME, phi, x)
    c = out.coefficients
    expect = sum(c[i] * ubar(g, i + 1, x)[1] for i in range(3))
    # phi(0) = 0 and grad phi is O(1): the u-bar_0 part is bounded
    assert np.abs(out.gradient - expect).max() <= 2.0
    assert c[2] == pytest.approx(1.5 / 5.0)


def test_doubling_tau_scaling():
    s = starred_2d()
    a = 0.5
    c1 = coefficients_2d(s, a, 1.0, 1e-4, LAME)
    c2 = coefficients_2d(s, a, 2.0, 1e-4, LAME)
    # M scales as tau^(-1/(1+a)); the translation coefficients scale inversely
    np.testing.assert_allclose(c2[:2] / c1[:2], 2 ** (1 / (1 + a)), rtol=1e-12)
    assert c2[2] == c1[2]
    # at x' = 0 delta = eps for any tau, so the gradient terms scale the same way
    g1 = GapGeometry(power_profile(a, 1.0, lower_curvature=0.5), 1e-4)
    g2 = GapGeometry(power_profile(a, 2.0, lower_curvature=0.5), 1e-4)
    x = np.array([0.0, 5e-5])
    z = BoundaryField.zero()
    t1 = asymptotic_gradient_2d(s, g1, LAME, z, x).gradient[1, 1]
    t2 = asymptotic_gradient_2d(s, g2, LAME, z, x).gradient[1, 1]
    assert t2 / t1 == pytest.approx(2 ** (1 / (1 + a)), rel=1e-12)


def test_2d_hypotheses():
    g = GapGeometry(power_profile(0.5, lower_curvature=0.5), 1e-4)
    x = np.array([0.0, 3e-5])
    z = BoundaryField.zero()
    with pytest.raises(HypothesisError):
        asymptotic_gradient_2d(starred_2d(q=(0.0, 0.0, 0.0)), g, LAME, z, x)
    with pytest.raises(HypothesisError):
        asymptotic_gradient_2d(starred_2d(a13=0.0, q=(0.0, 1.0, 1.0)), g, LAME, z, x)


def test_example_reduces_without_correction():
    g = CurvilinearSquareGeometry(1.0, 2.0, 0.5, 1e-4)
    ec = example_constants(g, LAME)
    s = starred_2d()
    phi = BoundaryField.linear([[0.0, 1.0], [0.0, 1.0]])
    x = np.array([0.0, 5e-5])
    plain = example_asymptotic(g, LAME, phi, s, x, ec, corrected=False)
    lead = asymptotic_gradient_2d(s, g, LAME, phi, x)
    np.testing.assert_allclose(plain.gradient, lead.gradient, rtol=1e-14)
    ec0 = type(ec)(ec.C_star, ec.K_star, np.zeros(2), ec.tau0, ec.M, ec.quad)
    np.testing.assert_allclose(example_asymptotic(g, LAME, phi, s, x, ec0).gradient, lead.gradient, rtol=1e-14)


def test_example_correction_factor_tends_to_one():
    g = CurvilinearSquareGeometry(1.0, 2.0, 0.5, 1e-3)
    ec = example_constants(g, LAME)
    fac = [abs(1.0 / (1.0 + ec.G_star[0] * e ** (1 / 3)) - 1.0) for e in (1e-3, 1e-4, 1e-5, 1e-6)]
    assert all(b < a for a, b in zip(fac, fac[1:]))


# ---------------------------------------------------------------- bounds

def test_bounds_equal_tau():
    s = starred_2d(q=(3.0, 8.0, 1.5))
    eps = np.array([1e-3, 1e-4])
    b = gradient_bounds(s, 0.5, LAME, eps, 1.0, 1.0, calibration=2.0)
    bm = blowup_matrices(s)
    L = np.array([1.0, 3.0])
    r = np.abs(bm.detB) / L
    np.testing.assert_allclose(b.upper / b.lower, r.max() / r[b.i0 - 1] * 4.0, rtol=1e-12)
    assert fitted_exponent(eps, np.sqrt(b.upper * b.lower)) == pytest.approx(-2 / 3, rel=1e-10)


def test_bounds_calibration_brackets():
    s = starred_2d()
    eps = np.array([1e-3, 1e-4, 1e-5])
    base = gradient_bounds(s, 0.5, LAME, eps, 0.9, 1.1)
    assert np.isnan(base.calibration)
    meas = 3.0 * base.base_upper
    c = calibrate_bounds(base, meas)
    b = gradient_bounds(s, 0.5, LAME, eps, 0.9, 1.1, calibration=c)
    assert np.all((b.lower <= meas) & (meas <= b.upper))


def test_bounds_degenerate():
    with pytest.raises(HypothesisError):
        gradient_bounds(starred_2d(a13=0.0, q=(0.0, 0.0, 1.0)), 0.5, LAME, [1e-3], 1.0, 1.0)


def test_bounds_hd():
    rng = np.random.default_rng(2)
    s = StarredData(spd(rng, 6), rng.normal(size=6), 3)
    b = gradient_bounds(s, 0.5, LAME, np.array([1e-2, 1e-3]), 1.0, 1.0, d=3)
    assert fitted_exponent([1e-2, 1e-3], b.base_upper) == pytest.approx(-1.0)
