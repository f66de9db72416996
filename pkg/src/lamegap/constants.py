"""Closed-form constants and rest-term exponents of the gradient asymptotics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .quadrature import QuadResult, geometric_breakpoints, integrate

# Lanczos approximation, g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma(z: float) -> float:
    """Gamma function for real, non-integer-pole arguments."""
    z = float(z)
    if z <= 0 and z == math.floor(z):
        raise ValueError("gamma has poles at non-positive integers")
    if z < 0:
        return math.pi / (math.sin(math.pi * z) * gamma(1.0 - z))
    if z < 0.5:
        return gamma(z + 1.0) / z
    z -= 1.0
    x = _LANCZOS[0]
    for i in range(1, 9):
        x += _LANCZOS[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return math.sqrt(2.0 * math.pi) * t ** (z + 0.5) * math.exp(-t) * x


def _check_alpha(alpha, closed_right=True):
    hi_ok = alpha <= 1.0 if closed_right else alpha < 1.0
    if not (alpha > 0.0 and hi_ok):
        raise ValueError(f"alpha must lie in (0, 1{']' if closed_right else ')'}, got {alpha}")


def gamma_alpha(alpha: float) -> float:
    """Gamma(1/(1+a)) * Gamma(a/(1+a))."""
    _check_alpha(alpha)
    return gamma(1.0 / (1.0 + alpha)) * gamma(alpha / (1.0 + alpha))


def gamma_alpha_reflection(alpha: float) -> float:
    """pi / sin(pi/(1+a)), the same product through the reflection formula."""
    _check_alpha(alpha)
    return math.pi / math.sin(math.pi / (1.0 + alpha))


def m_alpha_tau(alpha: float, tau: float) -> float:
    """2 Gamma_a / ((1+a) tau^(1/(1+a))) = integral over R of 1/(1 + tau|x|^(1+a))."""
    _check_alpha(alpha)
    if tau <= 0:
        raise ValueError("tau must be positive")
    return 2.0 * gamma_alpha(alpha) / ((1.0 + alpha) * tau ** (1.0 / (1.0 + alpha)))


@dataclass(frozen=True)
class Lame:
    lam: float
    mu: float

    def check(self, d: int = 2) -> "Lame":
        if self.mu <= 0 or d * self.lam + 2 * self.mu <= 0:
            raise ValueError(f"Lame pair violates mu > 0, d*lam + 2*mu > 0 (d={d})")
        return self

    def kappa3(self, d: int = 2) -> float:
        """Largest k with k <= mu and d*lam + 2*mu <= 1/k."""
        self.check(d)
        return min(self.mu, 1.0 / (d * self.lam + 2.0 * self.mu))


@dataclass(frozen=True)
class AsymptoticConstants:
    alpha: float
    beta: float
    tau: float
    d: int
    lame: Lame

    def __post_init__(self):
        _check_alpha(self.alpha, closed_right=False)
        self.lame.check(self.d)

    @property
    def M(self) -> float:
        return m_alpha_tau(self.alpha, self.tau)

    @property
    def L(self) -> np.ndarray:
        return lame_row(self.d, self.lame)

    @property
    def kappa3(self) -> float:
        return self.lame.kappa3(self.d)


def lame_row(d: int, lame) -> np.ndarray:
    """(mu, ..., mu, lam + 2 mu) of length d."""
    lam, mu = (lame.lam, lame.mu) if isinstance(lame, Lame) else lame
    out = np.full(d, float(mu))
    out[-1] = lam + 2.0 * mu
    return out


def rest_exponent_2d(alpha: float, beta: float) -> float:
    a = alpha
    t2 = (1 - a) * a / (2 * (1 + 2 * a))
    t3 = a * a / (2 * (1 + 2 * a) * (1 + a) ** 2)
    if a > beta:
        return min(beta / (1 + a), t2, t3)
    return min(t2, t3)


def rest_exponent_hd(alpha: float, d: int) -> float:
    if d < 3:
        raise ValueError("rest_exponent_hd needs d >= 3")
    a = alpha
    base = a * a / (2 * (1 + 2 * a) * (1 + a) ** 2)
    if d == 3:
        return base * (1 - a)
    if d == 4:
        return base * min(1 + a, 2 - a)
    return a * a / (2 * (1 + 2 * a) * (1 + a))


@dataclass(frozen=True)
class TildeEps:
    exponent: float
    has_log_factor: bool


def tilde_eps(alpha: float, beta: float) -> TildeEps:
    """Convergence order of the gap integral with a perturbed profile."""
    if alpha > beta:
        return TildeEps(beta / (1 + alpha), False)
    return TildeEps(alpha / (1 + alpha), alpha == beta)


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------


@dataclass
class GapIntegral:
    value: float
    error: float
    leading: float
    converged: bool

    @property
    def ratio(self) -> float:
        return self.value / self.leading


def _peak_breaks(scale, R):
    right = geometric_breakpoints(0.0, R, scale)
    return [-x for x in right] + [0.0] + right


def gap_integral(alpha: float, tau: float, eps: float, R: float, tol: float = 1e-10) -> GapIntegral:
    """Integral of 1/(eps + tau|x|^(1+a)) over |x| < R, with M eps^(-a/(1+a)).

    ``R = inf`` integrates over the whole line; the tail beyond the peak
    width s = (eps/tau)^(1/(1+a)) is mapped to (0, 1] by x = s/u.
    """
    _check_alpha(alpha)
    if eps <= 0 or R <= 0 or tau <= 0:
        raise ValueError("eps, tau and R must be positive")
    p = 1.0 + alpha
    s = (eps / tau) ** (1 / p)
    f = lambda x: 1.0 / (eps + tau * np.abs(x) ** p)
    lead = m_alpha_tau(alpha, tau) * eps ** (-alpha / p)
    if math.isinf(R):
        core = integrate(f, 0.0, s, (), tol, tol, strict=False)
        tail = integrate(lambda u: s * u ** (p - 2.0) / (eps * (u**p + 1.0)), 0.0, 1.0,
                         geometric_breakpoints(0.0, 1.0, 1e-3), tol, tol, strict=False)
        return GapIntegral(2 * (core.value + tail.value), 2 * (core.error + tail.error), lead,
                           core.converged and tail.converged)
    res = integrate(f, -R, R, _peak_breaks(s, R), tol, tol, strict=False)
    return GapIntegral(res.value, res.error, lead, res.converged)


def profile_gap_integral(profile, eps: float, R: float | None = None, tol: float = 1e-10) -> GapIntegral:
    """Integral of 1/(eps + h1 - h) over |x1| < R for a 2-D profile."""
    R = profile.R if R is None else R
    p = 1.0 + profile.alpha

    def f(x):
        xp = x[:, None]
        return 1.0 / (eps + profile.h_upper(xp) - profile.h_lower(xp))

    scale = (eps / profile.tau) ** (1 / p)
    res = integrate(f, -R, R, _peak_breaks(scale, R), tol, tol, strict=False)
    lead = m_alpha_tau(profile.alpha, profile.tau) * eps ** (-profile.alpha / p)
    return GapIntegral(res.value, res.error, lead, res.converged)


@dataclass
class ExampleConstants:
    C_star: float
    K_star: np.ndarray
    G_star: np.ndarray
    tau0: float
    M: float
    quad: QuadResult


def example_constants(geom, lame, tol: float = 1e-10) -> ExampleConstants:
    """C*, K*_i, G*_i (i = 1, 2) for the curvilinear-square geometry.

    C* is the improper integral over |x1| < r0 of 1/(h1 - h) - 1/(tau0|x1|^(1+a));
    the integrand is evaluated through the cancellation-free excess
    ``tau0 - (h1-h)/|x1|^(1+a)`` so it stays accurate near the origin.
    """
    a, r0, tau0 = geom.alpha, geom.r0, geom.tau
    p = 1.0 + a

    def f(x):
        ax = np.abs(x)
        e = geom.gap_excess(ax)
        return e / (tau0 * ax**p * (tau0 - e))

    quad = integrate(f, 0.0, r0, geometric_breakpoints(0.0, r0, r0 / 1e3), tol, tol)
    c_star = 2.0 * quad.value
    L = lame_row(2, lame)
    k_star = c_star - 2.0 * L / (a * tau0 * r0**a)
    M = m_alpha_tau(a, tau0)
    g_star = k_star / (L * M)
    return ExampleConstants(c_star, k_star, g_star, tau0, M, quad)
