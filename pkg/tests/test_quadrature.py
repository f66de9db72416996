import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lamegap.quadrature import QuadratureError, geometric_breakpoints, integrate


def test_polynomial_exact():
    r = integrate(lambda x: 3 * x**2 - x + 1, -1.0, 2.0)
    assert r.value == pytest.approx(9 - 1.5 + 3, rel=1e-14)
    assert r.converged


def test_sqrt_singularity():
    r = integrate(lambda x: 1 / np.sqrt(x), 0.0, 1.0, abs_tol=1e-12, rel_tol=1e-12)
    assert r.value == pytest.approx(2.0, rel=1e-10)


def test_sharp_peak_with_breakpoints():
    eps = 1e-8
    r = integrate(lambda x: eps / (eps**2 + x**2), -1.0, 1.0, geometric_breakpoints(0, 1, eps))
    assert r.value == pytest.approx(2 * math.atan(1 / eps), rel=1e-9)


def test_breakpoints_sorted_and_inside():
    b = geometric_breakpoints(0.0, 1.0, 1e-3)
    assert all(0 < x < 1 for x in b)
    assert b == sorted(b)


def test_strict_failure():
    with pytest.raises(QuadratureError):
        integrate(lambda x: np.sin(1 / x), 1e-6, 1.0, max_intervals=10)
    r = integrate(lambda x: np.sin(1 / x), 1e-6, 1.0, max_intervals=10, strict=False)
    assert not r.converged


@given(st.floats(0.1, 5.0), st.floats(-2.0, 2.0))
def test_exponential(k, a):
    r = integrate(lambda x: np.exp(k * x), a, a + 1.0)
    assert r.value == pytest.approx((math.exp(k * (a + 1)) - math.exp(k * a)) / k, rel=1e-12)
