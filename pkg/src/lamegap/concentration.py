"""Free-constant system, starred limits, blow-up matrices and leading-order gradients.

Index conventions follow the rigid basis: entries are addressed 1-based in
the public helpers (``a(i, j)``, ``q(j)``) and 0-based in the arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .auxiliary import BoundaryField, ubar, ubar0
from .constants import lame_row, m_alpha_tau, rest_exponent_2d, rest_exponent_hd
from .fem.elasticity import FieldSolution, PointLocator, gradients_at

HYPOTHESIS_RTOL = 1e-8


class IndefiniteSystemError(RuntimeError):
    pass


class DivergentEntryError(KeyError):
    pass


class HypothesisError(ValueError):
    """Raised when a non-degeneracy hypothesis (non-vanishing factor) fails."""


# ---------------------------------------------------------------------------
# linear system
# ---------------------------------------------------------------------------


@dataclass
class ConcentrationSystem:
    A: np.ndarray
    Y: np.ndarray
    C: np.ndarray
    epsilon: float
    residual: float

    @property
    def size(self) -> int:
        return len(self.Y)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.A)[0])


def solve_system(A, Y, epsilon: float = float("nan"), sym_rtol: float = 1e-10) -> ConcentrationSystem:
    A = np.asarray(A, dtype=float)
    Y = np.asarray(Y, dtype=float)
    scale = np.max(np.abs(A))
    if np.max(np.abs(A - A.T)) > sym_rtol * scale:
        raise IndefiniteSystemError("matrix A is not symmetric")
    A = 0.5 * (A + A.T)
    try:
        fac = cho_factor(A)
    except LinAlgError as exc:
        raise IndefiniteSystemError("matrix A is not positive definite") from exc
    C = cho_solve(fac, Y)
    ny = np.linalg.norm(Y)
    res = float(np.linalg.norm(A @ C - Y) / ny) if ny > 0 else float(np.linalg.norm(A @ C))
    return ConcentrationSystem(A, Y, C, epsilon, res)


def assemble_system(solutions: Sequence[FieldSolution], K, epsilon: float = float("nan")) -> ConcentrationSystem:
    """A_ij = a(u_i, u_j), Y_j = -a(u_0, u_j) from sub-problem solutions.

    ``solutions[0]`` is u_0 and ``solutions[i]`` is u_i.  ``K`` is the global
    stiffness of the shared mesh.
    """
    U = np.stack([s.vector for s in solutions])
    KU = (K @ U.T).T
    G = U @ KU.T
    A = G[1:, 1:]
    Y = -G[0, 1:]
    return solve_system(A, Y, epsilon)


def reconstruct_values(solutions: Sequence[FieldSolution], C) -> np.ndarray:
    """Nodal values of sum_i C^i u_i + u_0."""
    out = solutions[0].values.copy()
    for c, s in zip(C, solutions[1:]):
        out += c * s.values
    return out


def reconstruct_field(solutions: Sequence[FieldSolution], C, x, locator: PointLocator | None = None) -> np.ndarray:
    """sum_i C^i grad u_i(x) + grad u_0(x)."""
    grads = gradients_at(list(solutions), x, locator)
    out = grads[0].copy()
    for c, g in zip(C, grads[1:]):
        out += c * g
    return out


# ---------------------------------------------------------------------------
# starred limits
# ---------------------------------------------------------------------------


def q_rate(alpha: float, d: int, j: int) -> float:
    """Convergence exponent of Q_j towards Q_j* (j is 1-based)."""
    a = alpha
    if j <= d:
        return (d - 1 - a) * a / (d * (1 + 2 * a))
    return (d - a) * (1 + a) / ((d + 1) * (1 + 2 * a))


def a_rate(alpha: float, d: int, i: int, j: int) -> float | None:
    """Convergence exponent of a_ij towards a_ij*; None for 2-D divergent entries."""
    a = alpha
    i, j = min(i, j), max(i, j)
    if i <= d and j <= d:
        if d == 2:
            return None
        if i == j:
            return rest_exponent_hd(a, d)
        return a * a / (2 * (1 + 2 * a) * (1 + a) ** (2 if d == 3 else 1))
    if i <= d < j:
        return a * a / (2 * (1 + 2 * a) * (1 + a) ** (2 if d == 2 else 1))
    return a / (2 * (1 + 2 * a))


@dataclass
class EntryFit:
    name: str
    eps: list
    values: list
    exponent: float | None
    status: str  # ok | negligible | divergent | rejected
    value: float = float("nan")  # adopted limit (all-point fit)
    value_two_point: float = float("nan")
    residual: float = float("nan")
    note: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def stability(self) -> float:
        """|two-point - all-point| / |all-point|."""
        if self.status == "negligible":
            return 0.0
        return abs(self.value_two_point - self.value) / max(abs(self.value), 1e-300)


def _pinned_fit(eps, vals, p):
    """value = v* + c eps^p through the last two points and by least squares."""
    e = np.asarray(eps, dtype=float) ** p
    v = np.asarray(vals, dtype=float)
    two = (v[-1] * e[-2] - v[-2] * e[-1]) / (e[-2] - e[-1])
    X = np.column_stack([np.ones_like(e), e])
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    res = np.sqrt(np.mean((X @ coef - v) ** 2)) / max(abs(coef[0]), 1e-300)
    return float(two), float(coef[0]), float(coef[1]), float(res)


def fit_entry(name, eps, vals, p, scale, noise_rtol=1e-9, flat_rtol=1e-4, max_residual=1e-2) -> EntryFit:
    """Pinned-rate fit of one convergent entry.

    Entries below ``noise_rtol*scale`` are zero by symmetry.  Steps smaller
    than ``flat_rtol`` times the entry magnitude are treated as flat when
    judging monotonicity; larger sign changes reject the fit.
    """
    eps, vals = list(map(float, eps)), list(map(float, vals))
    fit = EntryFit(name, eps, vals, p, "ok")
    v = np.asarray(vals)
    if np.max(np.abs(v)) <= noise_rtol * scale:
        fit.status, fit.value, fit.value_two_point, fit.residual = "negligible", 0.0, 0.0, 0.0
        fit.note = "zero within round-off"
        return fit
    dv = np.diff(v)
    big = np.abs(dv) > max(noise_rtol * scale, flat_rtol * np.max(np.abs(v)))
    if np.any(big) and len(set(np.sign(dv[big]))) > 1:
        fit.status = "rejected"
        fit.note = "non-monotone sequence"
        return fit
    two, allv, c, res = _pinned_fit(eps, vals, p)
    fit.value_two_point, fit.value, fit.residual = two, allv, res
    fit.extra["c"] = c
    if res > max_residual:
        fit.status = "rejected"
        fit.note = f"fit residual {res:.2e} above {max_residual:.0e}"
    return fit


def fit_divergent(name, eps, vals, alpha, kind, lead=None) -> EntryFit:
    """Fit the 2-D divergent forms: c0 eps^(-a/(1+a)) + c1|ln eps| + c2 or c1|ln eps| + c2."""
    e = np.asarray(eps, dtype=float)
    v = np.asarray(vals, dtype=float)
    fit = EntryFit(name, list(map(float, eps)), list(map(float, vals)), None, "divergent",
                   note="divergent in d=2")
    if kind == "diagonal":
        X = np.column_stack([e ** (-alpha / (1 + alpha)), np.abs(np.log(e)), np.ones_like(e)])
        coef, *_ = np.linalg.lstsq(X, v, rcond=None)
        fit.extra.update(leading=float(coef[0]), log=float(coef[1]), const=float(coef[2]))
        if lead is not None:
            fit.extra["leading_ratio"] = float(coef[0] / lead)
            fit.extra["scaled"] = list(map(float, v * e ** (alpha / (1 + alpha)) / lead))
    else:
        X = np.column_stack([np.abs(np.log(e)), np.ones_like(e)])
        coef, *_ = np.linalg.lstsq(X, v, rcond=None)
        fit.extra.update(log=float(coef[0]), const=float(coef[1]),
                         per_log=list(map(float, v / np.abs(np.log(e)))))
    return fit


@dataclass
class StarredData:
    a_star: np.ndarray  # NaN where the entry diverges (d = 2)
    q_star: np.ndarray
    dim: int
    provenance: dict = field(default_factory=dict)

    def a(self, i: int, j: int) -> float:
        v = self.a_star[i - 1, j - 1]
        if np.isnan(v):
            raise DivergentEntryError(f"a_{i}{j}* is divergent in d={self.dim}")
        return float(v)

    def q(self, j: int) -> float:
        return float(self.q_star[j - 1])

    def to_json(self) -> str:
        a = [[None if np.isnan(x) else float(x) for x in row] for row in self.a_star]
        return json.dumps({"dim": self.dim, "a_star": a, "q_star": [float(x) for x in self.q_star],
                           "provenance": self.provenance}, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "StarredData":
        d = json.loads(text)
        a = np.array([[np.nan if x is None else x for x in row] for row in d["a_star"]], dtype=float)
        return StarredData(a, np.array(d["q_star"], dtype=float), int(d["dim"]), d.get("provenance", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @staticmethod
    def load(path) -> "StarredData":
        with open(path) as fh:
            return StarredData.from_json(fh.read())


def estimate_starred(systems: Sequence[ConcentrationSystem], alpha: float, dim: int = 2,
                     tau: float | None = None, lame=None, max_residual: float = 1e-2) -> StarredData:
    """Rate-pinned extrapolation of a_ij(eps), Q_j(eps) to eps = 0.

    Each convergent entry is fitted as ``v* + c eps^p`` with p the known
    convergence order of that entry, once through the two smallest eps and
    once by least squares on all points; the least-squares value is adopted.
    """
    if len(systems) < 3:
        raise ValueError("need at least three eps values")
    eps = np.array([s.epsilon for s in systems])
    if not np.all(np.diff(eps) < 0):
        raise ValueError("eps sequence must be strictly decreasing")
    n = dim * (dim + 1) // 2
    A = np.stack([s.A for s in systems])
    Y = np.stack([s.Y for s in systems])
    scale_a = float(np.max(np.abs(A[:, dim:, dim:]))) if n > dim else float(np.max(np.abs(A)))
    scale_q = float(np.max(np.abs(Y))) or 1.0
    a_star = np.full((n, n), np.nan)
    q_star = np.zeros(n)
    fits = {}
    lead = None
    if tau is not None and lame is not None:
        lead = lame_row(dim, lame) * m_alpha_tau(alpha, tau)
    for i in range(1, n + 1):
        for j in range(i, n + 1):
            name = f"a{i}{j}"
            p = a_rate(alpha, dim, i, j)
            if p is None:
                kind = "diagonal" if i == j else "offdiag"
                fits[name] = fit_divergent(name, eps, A[:, i - 1, j - 1], alpha, kind,
                                           None if lead is None or i != j else lead[i - 1])
                continue
            f = fit_entry(name, eps, A[:, i - 1, j - 1], p, scale_a, max_residual=max_residual)
            fits[name] = f
            if f.status in ("ok", "negligible"):
                a_star[i - 1, j - 1] = a_star[j - 1, i - 1] = f.value
    for j in range(1, n + 1):
        name = f"q{j}"
        f = fit_entry(name, eps, Y[:, j - 1], q_rate(alpha, dim, j), scale_q, max_residual=max_residual)
        fits[name] = f
        q_star[j - 1] = f.value if f.status in ("ok", "negligible") else np.nan
    prov = {"eps": list(map(float, eps)), "alpha": alpha,
            "fits": {k: asdict(v) for k, v in fits.items()}}
    rejected = [k for k, v in fits.items() if v.status == "rejected"]
    if rejected:
        prov["rejected"] = rejected
    return StarredData(a_star, q_star, dim, prov)


# ---------------------------------------------------------------------------
# blow-up factor matrices
# ---------------------------------------------------------------------------


@dataclass
class BlowupMatrices:
    dim: int
    B: list = field(default_factory=list)  # d = 2
    detB: list = field(default_factory=list)
    A: np.ndarray | None = None  # d >= 3
    F: list = field(default_factory=list)
    detF: list = field(default_factory=list)
    detA: float = float("nan")
    consistent: bool = True
    note: str = ""


def blowup_matrices(starred: StarredData, d: int | None = None) -> BlowupMatrices:
    d = starred.dim if d is None else d
    if d == 2:
        out = BlowupMatrices(2)
        a33 = starred.a(3, 3)
        for i in (1, 2):
            Bi = np.array([[starred.q(i), starred.a(i, 3)], [starred.q(3), a33]])
            out.B.append(Bi)
            out.detB.append(float(np.linalg.det(Bi)))
        if not a33 > 0:
            out.consistent, out.note = False, "a33* is not positive"
        return out
    n = d * (d + 1) // 2
    A = np.array([[starred.a(i, j) for j in range(1, n + 1)] for i in range(1, n + 1)])
    out = BlowupMatrices(d, A=A)
    out.detA = float(np.linalg.det(A))
    for i in range(n):
        Fi = A.copy()
        Fi[:, i] = starred.q_star
        out.F.append(Fi)
        out.detF.append(float(np.linalg.det(Fi)))
    if not out.detA > 0 or np.linalg.eigvalsh(0.5 * (A + A.T))[0] <= 0:
        out.consistent, out.note = False, "A* is not positive definite"
    return out


# ---------------------------------------------------------------------------
# leading-order gradients
# ---------------------------------------------------------------------------


@dataclass
class AsymptoticGradient:
    gradient: np.ndarray
    coefficients: np.ndarray  # multipliers of grad u-bar_i, i = 1..n
    rest_exponents: dict


def _check_2d_hypotheses(starred: StarredData, bm: BlowupMatrices):
    scale = max(abs(starred.a(3, 3)), float(np.max(np.abs(starred.q_star))),
                abs(starred.a(1, 3)), abs(starred.a(2, 3)))
    if abs(starred.q(3)) <= HYPOTHESIS_RTOL * scale:
        raise HypothesisError("Q3* vanishes: hypotheses unmet")
    for i, det in enumerate(bm.detB, start=1):
        if abs(det) <= HYPOTHESIS_RTOL * scale * scale:
            raise HypothesisError(f"det B{i}* vanishes: hypotheses unmet")


def coefficients_2d(starred: StarredData, alpha, tau, eps, lame, check: bool = True,
                    G_star=None) -> np.ndarray:
    bm = blowup_matrices(starred, 2)
    if check:
        _check_2d_hypotheses(starred, bm)
    L = lame_row(2, lame)
    M = m_alpha_tau(alpha, tau)
    a33 = starred.a(3, 3)
    s = eps ** (alpha / (1 + alpha))
    c = np.zeros(3)
    for i in range(2):
        c[i] = bm.detB[i] / a33 * s / (L[i] * M)
        if G_star is not None:
            c[i] /= 1.0 + G_star[i] * s
    c[2] = starred.q(3) / a33
    return c


def _combine(geometry, coeffs, phi, x):
    x = np.asarray(x, dtype=float)
    _, grad = ubar0(geometry, phi, x)
    for i, c in enumerate(coeffs, start=1):
        grad = grad + c * ubar(geometry, i, x)[1]
    return grad


def asymptotic_gradient_2d(starred: StarredData, geometry, lame, phi: BoundaryField, x) -> AsymptoticGradient:
    """Leading-order grad u in the gap for d = 2; rest terms are metadata only."""
    if geometry.dim != 2:
        raise ValueError("asymptotic_gradient_2d needs a 2-D geometry")
    a, b = geometry.alpha, geometry.profile.beta
    c = coefficients_2d(starred, a, geometry.tau, geometry.epsilon, lame)
    rest = {"translations": rest_exponent_2d(a, b), "rotation": a / (2 * (1 + 2 * a)),
            "delta_power": -(1 - a) / (1 + a)}
    return AsymptoticGradient(_combine(geometry, c, phi, x), c, rest)


def example_asymptotic(geom, lame, phi: BoundaryField, starred: StarredData, x, constants=None,
                       corrected: bool = True) -> AsymptoticGradient:
    """Curvilinear-square evaluation with the 1/(1 + G*_i eps^(a/(1+a))) factor."""
    from .constants import example_constants

    ec = constants or example_constants(geom, lame)
    a = geom.alpha
    c = coefficients_2d(starred, a, ec.tau0, geom.epsilon, lame, G_star=ec.G_star if corrected else None)
    rest = {"translations": min(a * a / (2 * (1 + 2 * a) * (1 + a) ** 2), (1 - a) * a / (2 * (1 + 2 * a))),
            "rotation": a / (2 * (1 + 2 * a)), "delta_power": -(1 - a) / (1 + a)}
    return AsymptoticGradient(_combine(geom, c, phi, x), c, rest)


def coefficients_hd(starred: StarredData) -> np.ndarray:
    bm = blowup_matrices(starred)
    scale = float(np.max(np.abs(bm.A)))
    n = len(bm.detF)
    if abs(bm.detA) <= HYPOTHESIS_RTOL * scale**n:
        raise HypothesisError("A* is singular")
    return np.array(bm.detF) / bm.detA


def asymptotic_gradient_hd(starred: StarredData, geometry, lame, phi: BoundaryField, x,
                           check: bool = True) -> AsymptoticGradient:
    d = geometry.dim
    if d < 3 or starred.dim != d:
        raise ValueError("asymptotic_gradient_hd needs matching d >= 3 data and geometry")
    bm = blowup_matrices(starred)
    c = coefficients_hd(starred)
    if check:
        scale = float(np.max(np.abs(bm.A)))
        n = len(c)
        qs = float(np.max(np.abs(starred.q_star))) or 1.0
        for i, det in enumerate(bm.detF, start=1):
            if abs(det) <= HYPOTHESIS_RTOL * scale ** (n - 1) * qs:
                raise HypothesisError(f"det F{i}* vanishes: hypotheses unmet")
    rest = {"all": rest_exponent_hd(geometry.alpha, d), "delta_power": -1 / (1 + geometry.alpha)}
    return AsymptoticGradient(_combine(geometry, c, phi, x), c, rest)


# ---------------------------------------------------------------------------
# bounds along x' = 0
# ---------------------------------------------------------------------------


@dataclass
class GradientBounds:
    lower: np.ndarray
    upper: np.ndarray
    eps: np.ndarray
    calibration: float
    base_lower: np.ndarray
    base_upper: np.ndarray
    i0: int


def gradient_bounds(starred: StarredData, alpha: float, lame, eps, tau1: float, tau2: float,
                    d: int = 2, calibration: float | None = None) -> GradientBounds:
    """Bracket for |grad u| on {x' = 0} with the universal constant kept explicit.

    Without a calibration value the constant is reported as NaN and the
    bracket collapses to its C-free base values.
    """
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    if d == 2:
        bm = blowup_matrices(starred, 2)
        L = lame_row(2, lame)
        dets = np.abs(np.array(bm.detB))
        a33 = abs(starred.a(3, 3))
        scale = max(float(np.max(np.abs(starred.q_star))), a33) ** 2
        if np.all(dets <= HYPOTHESIS_RTOL * scale):
            raise HypothesisError("all det B_i* vanish: bounds unavailable")
        i0 = int(np.argmax(dets / L))
        rate = eps ** (-1.0 / (1 + alpha))
        base_lo = dets[i0] / (L[i0] * tau2 ** (1 / (1 + alpha)) * a33) * rate
        base_hi = np.max(dets / L) / (tau1 ** (1 / (1 + alpha)) * a33) * rate
    else:
        bm = blowup_matrices(starred, d)
        dets = np.abs(np.array(bm.detF[:d]))
        if np.all(dets == 0):
            raise HypothesisError("all det F_i* vanish: bounds unavailable")
        i0 = int(np.argmax(dets))
        base_lo = dets[i0] / abs(bm.detA) / eps
        base_hi = np.max(dets) / abs(bm.detA) / eps
    Cc = float("nan") if calibration is None else calibration
    cfac = 1.0 if calibration is None else calibration
    return GradientBounds(base_lo / cfac, base_hi * cfac, eps, Cc, base_lo, base_hi, i0 + 1)


def calibrate_bounds(bounds: GradientBounds, measured, index: int = 0, safety: float = 2.0) -> float:
    """Smallest C >= 1 bracketing ``measured[index]``, times a safety factor."""
    m = float(np.asarray(measured)[index])
    c = max(1.0, bounds.base_lower[index] / m, m / bounds.base_upper[index])
    return c * safety


def max_gradient_on_axis(solutions, C, eps: float, h0: float = 0.0, n: int = 13,
                         locator: PointLocator | None = None) -> float:
    """max over x = (0, x2), h(0) <= x2 <= h(0) + eps of the Frobenius norm of grad u."""
    loc = locator or PointLocator(solutions[0].mesh)
    best = 0.0
    for t in np.linspace(0.0, 1.0, n):
        g = reconstruct_field(solutions, C, np.array([0.0, h0 + t * eps]), loc)
        best = max(best, float(np.linalg.norm(g)))
    return best


def fitted_exponent(eps, values) -> float:
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])

