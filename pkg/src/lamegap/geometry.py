"""Core-shell gap geometries.

A geometry is described near the touching point by two profile functions
over the tangential variable ``x'``: the matrix boundary ``x_d = h(x')`` and
the inclusion boundary ``x_d = eps + h1(x')``.  Away from the gap window
``|x'| <= 2R`` the 2-D curves are closed off so that the pair can be meshed.

Profiles take arrays whose last axis has length ``d - 1`` and return arrays
over the leading axes.  Gradients keep the trailing axis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.optimize import brentq

ProfileFn = Callable[[np.ndarray], np.ndarray]


def _as_xp(xp, dim: int) -> np.ndarray:
    xp = np.asarray(xp, dtype=float)
    if dim == 2 and (xp.ndim == 0 or xp.shape[-1] != 1):
        xp = xp[..., None]
    if xp.shape[-1] != dim - 1:
        raise ValueError(f"expected trailing axis of length {dim - 1}, got shape {xp.shape}")
    return xp


@dataclass(frozen=True)
class GapProfile:
    """Lower/upper gap profiles with their analytic gradients."""

    alpha: float
    beta: float
    tau: float
    R: float
    h_lower: ProfileFn
    h_upper: ProfileFn
    grad_lower: ProfileFn
    grad_upper: ProfileFn
    dim: int = 2
    name: str = "custom"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta <= 0 or self.tau <= 0 or self.R <= 0:
            raise ValueError("beta, tau and R must be positive")

    def difference(self, xp) -> np.ndarray:
        xp = _as_xp(xp, self.dim)
        return self.h_upper(xp) - self.h_lower(xp)


def _norm(xp: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(xp * xp, axis=-1))


def _radial_power(xp: np.ndarray, q: float):
    """|x'|^q and its gradient q |x'|^(q-2) x' (zero at the origin for q > 1)."""
    r = _norm(xp)
    val = r**q
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(r > 0, q * r ** (q - 2.0), 0.0)
    return val, fac[..., None] * xp


def power_profile(
    alpha: float,
    tau: float = 1.0,
    beta: float = 0.5,
    R: float = 0.25,
    lower_curvature: float = 0.0,
    correction: float = 0.0,
    dim: int = 2,
) -> GapProfile:
    """h = c|x'|^2, h1 = c|x'|^2 + tau|x'|^(1+alpha) + k|x'|^(1+alpha+beta).

    The gap law ``h1 - h`` is the pure power ``tau|x'|^(1+alpha)`` unless a
    correction ``k`` is given; the common curvature ``c`` only bends both
    boundaries so that the 2-D domain can be closed.
    """
    c, k = lower_curvature, correction
    p1, p2 = 1.0 + alpha, 1.0 + alpha + beta

    def h_lower(xp):
        return c * np.sum(xp * xp, axis=-1)

    def grad_lower(xp):
        return 2.0 * c * xp

    def h_upper(xp):
        v1, _ = _radial_power(xp, p1)
        v2, _ = _radial_power(xp, p2)
        return h_lower(xp) + tau * v1 + k * v2

    def grad_upper(xp):
        _, g1 = _radial_power(xp, p1)
        _, g2 = _radial_power(xp, p2)
        return grad_lower(xp) + tau * g1 + k * g2

    return GapProfile(alpha, beta, tau, R, h_lower, h_upper, grad_lower, grad_upper, dim, "power")


def _superellipse_bottom(r: float, p: float):
    """Bottom arc of |x|^p + |y - r|^p = r^p written as y = h(x), |x| < r."""

    def h(xp):
        t = (np.abs(xp[..., 0]) / r) ** p
        return -r * np.expm1(np.log1p(-t) / p)

    def grad(xp):
        x = xp[..., 0]
        t = (np.abs(x) / r) ** p
        g = (1.0 - t) ** (1.0 / p - 1.0) * (np.abs(x) / r) ** (p - 1.0) * np.sign(x)
        return g[..., None]

    return h, grad


def _excess_series(t: np.ndarray, a: float) -> np.ndarray:
    """(a t - 1 + (1 - t)^a) / t, stable for small t."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = t < 0.05
    ts = t[small]
    acc = np.zeros_like(ts)
    coef = 1.0
    for k in range(1, 30):
        coef *= (a - k + 1) / k
        if k >= 2:
            acc += coef * (-1.0) ** k * ts ** (k - 1)
    out[small] = acc
    tl = t[~small]
    out[~small] = (a * tl - 1.0 + (1.0 - tl) ** a) / tl
    return out


class ClosedCurve:
    """Closed convex curve whose bottom part is a graph over |x1| <= window."""

    window: float
    center: np.ndarray

    def graph(self, x1):
        raise NotImplementedError

    def dgraph(self, x1):
        raise NotImplementedError

    def arc_point(self, theta):
        raise NotImplementedError

    def hit(self, p, d) -> float:
        raise NotImplementedError

    @cached_property
    def theta_window(self) -> float:
        w = self.window
        return math.atan2(float(self.graph(w)) - self.center[1], w - self.center[0])

    def polyline(self, n: int = 400) -> np.ndarray:
        """Counter-clockwise samples starting at the bottom centre."""
        nw = max(n // 4, 8)
        xr = np.linspace(0.0, self.window, nw, endpoint=False)
        th = np.linspace(self.theta_window, math.pi - self.theta_window, n - 2 * nw, endpoint=False)
        xl = np.linspace(-self.window, 0.0, nw, endpoint=False)
        right = np.column_stack([xr, self.graph(xr)])
        arc = self.arc_point(th)
        left = np.column_stack([xl, self.graph(xl)])
        return np.vstack([right, arc, left])


class GluedCircleCurve(ClosedCurve):
    """Graph on |x1| <= window closed by the circle tangent at both ends."""

    def __init__(self, graph: Callable, dgraph: Callable, window: float):
        self._graph, self._dgraph, self.window = graph, dgraph, window
        g0 = float(graph(window))
        s = float(dgraph(window))
        if s <= 0:
            raise ValueError(
                "cannot close the profile with a tangent circle: the slope at the "
                "window edge must be positive (use lower_curvature > 0)"
            )
        cy = g0 + window / s
        self.center = np.array([0.0, cy])
        self.radius = math.hypot(window, window / s)

    def graph(self, x1):
        return self._graph(x1)

    def dgraph(self, x1):
        return self._dgraph(x1)

    def arc_point(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.center + self.radius * np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    def hit(self, p, d) -> float:
        q = np.asarray(p) - self.center
        b = float(q @ d)
        c = float(q @ q) - self.radius**2
        return -b + math.sqrt(b * b - c)

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        inside_disc = np.hypot(x - self.center[0], y - self.center[1]) < self.radius
        inw = np.abs(x) < self.window
        xw = np.clip(x, -self.window, self.window)
        top = self.center[1] + np.sqrt(np.maximum(self.radius**2 - xw**2, 0.0))
        in_window = (y > self.graph(xw)) & (y < top)
        return np.where(inw, in_window, inside_disc)


class SuperellipseCurve(ClosedCurve):
    """|x1|^p + |x2 - cy|^p = r^p."""

    def __init__(self, r: float, cy: float, p: float, window: float):
        if window >= r:
            raise ValueError("window must be smaller than the superellipse radius")
        self.r, self.p, self.window = r, p, window
        self.center = np.array([0.0, cy])
        self._h, self._dh = _superellipse_bottom(r, p)
        self._base = cy - r

    def graph(self, x1):
        return self._base + self._h(np.asarray(x1, dtype=float)[..., None])

    def dgraph(self, x1):
        return self._dh(np.asarray(x1, dtype=float)[..., None])[..., 0]

    def level(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return (np.abs(pts[:, 0]) ** self.p + np.abs(pts[:, 1] - self.center[1]) ** self.p) ** (
            1.0 / self.p
        ) - self.r

    def arc_point(self, theta):
        theta = np.asarray(theta, dtype=float)
        c, s = np.cos(theta), np.sin(theta)
        t = self.r / (np.abs(c) ** self.p + np.abs(s) ** self.p) ** (1.0 / self.p)
        return self.center + np.stack([t * c, t * s], axis=-1)

    def hit(self, p, d) -> float:
        p = np.asarray(p, dtype=float)
        f = lambda t: float(self.level(p + t * d)[0])
        hi = 4.0 * self.r
        return brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    def contains(self, pts) -> np.ndarray:
        return self.level(pts) < 0


class GapGeometry:
    """Matrix D and inclusion D1 = D1* + (0', eps) described by a GapProfile."""

    kind = "power"

    def __init__(self, profile: GapProfile, epsilon: float, dim: int | None = None):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.profile = profile
        self.epsilon = float(epsilon)
        self.dim = profile.dim if dim is None else dim
        if self.dim < 2:
            raise ValueError("dimension must be at least 2")

    @property
    def alpha(self) -> float:
        return self.profile.alpha

    @property
    def tau(self) -> float:
        return self.profile.tau

    @property
    def R(self) -> float:
        return self.profile.R

    @property
    def window(self) -> float:
        return 2.0 * self.profile.R

    def with_epsilon(self, epsilon: float) -> "GapGeometry":
        return type(self)(self.profile, epsilon, self.dim)

    def lower(self, xp) -> np.ndarray:
        return self.profile.h_lower(_as_xp(xp, self.dim))

    def upper(self, xp) -> np.ndarray:
        """Inclusion boundary height eps + h1(x')."""
        return self.epsilon + self.profile.h_upper(_as_xp(xp, self.dim))

    # -- closed curves for meshing (2-D only) --------------------------------
    @cached_property
    def outer_curve(self) -> ClosedCurve:
        self._require_2d()
        prof = self.profile
        return GluedCircleCurve(
            lambda x: prof.h_lower(np.asarray(x, dtype=float)[..., None]),
            lambda x: prof.grad_lower(np.asarray(x, dtype=float)[..., None])[..., 0],
            self.window,
        )

    @cached_property
    def inner_curve(self) -> ClosedCurve:
        self._require_2d()
        prof, eps = self.profile, self.epsilon
        return GluedCircleCurve(
            lambda x: eps + prof.h_upper(np.asarray(x, dtype=float)[..., None]),
            lambda x: prof.grad_upper(np.asarray(x, dtype=float)[..., None])[..., 0],
            self.window,
        )

    def _require_2d(self):
        if self.dim != 2:
            raise ValueError("closed boundary curves are only available in 2-D")

    def check_nested(self, n: int = 2000) -> bool:
        """Sampled check that the inclusion boundary lies strictly inside D."""
        pts = self.inner_curve.polyline(n)
        return bool(np.all(self.outer_curve.contains(pts)))

    def describe(self) -> dict:
        p = self.profile
        return {"kind": self.kind, "alpha": p.alpha, "beta": p.beta, "tau": p.tau, "R": p.R,
                "epsilon": self.epsilon}


class CurvilinearSquareGeometry(GapGeometry):
    """Rounded squares |x1|^(1+a) + |x2 - eps - r1|^(1+a) = r1^(1+a) inside
    |x1|^(1+a) + |x2 - r2|^(1+a) = r2^(1+a)."""

    kind = "curvilinear_square"

    def __init__(self, r1: float, r2: float, alpha: float, epsilon: float, r0: float | None = None):
        if not 0 < r1 < r2:
            raise ValueError("need 0 < r1 < r2")
        if r0 is None:
            r0 = 0.4 * min(r1, r2)
        if not 0 < r0 < 0.5 * min(r1, r2):
            raise ValueError("r0 must lie in (0, min(r1, r2)/2)")
        self.r1, self.r2, self.r0 = float(r1), float(r2), float(r0)
        p = 1.0 + alpha
        h1, g1 = _superellipse_bottom(r1, p)
        h, g = _superellipse_bottom(r2, p)
        profile = GapProfile(
            alpha=alpha,
            beta=1.0 + alpha,
            tau=effective_tau0(r1, r2, alpha),
            R=r0,
            h_lower=h,
            h_upper=h1,
            grad_lower=g,
            grad_upper=g1,
            dim=2,
            name="curvilinear_square",
        )
        super().__init__(profile, epsilon, 2)

    def with_epsilon(self, epsilon: float) -> "CurvilinearSquareGeometry":
        return CurvilinearSquareGeometry(self.r1, self.r2, self.alpha, epsilon, self.r0)

    @cached_property
    def outer_curve(self) -> ClosedCurve:
        return SuperellipseCurve(self.r2, self.r2, 1.0 + self.alpha, self.window)

    @cached_property
    def inner_curve(self) -> ClosedCurve:
        return SuperellipseCurve(self.r1, self.epsilon + self.r1, 1.0 + self.alpha, self.window)

    def gap_excess(self, x1) -> np.ndarray:
        """tau0 - (h1 - h)(x1)/|x1|^(1+alpha), evaluated without cancellation."""
        p = 1.0 + self.alpha
        a = 1.0 / p
        x = np.abs(np.asarray(x1, dtype=float))
        e1 = _excess_series((x / self.r1) ** p, a)
        e2 = _excess_series((x / self.r2) ** p, a)
        return self.r1 ** (1.0 - p) * e1 - self.r2 ** (1.0 - p) * e2

    def describe(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "r1": self.r1, "r2": self.r2,
                "r0": self.r0, "tau0": self.tau, "epsilon": self.epsilon}


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def gap_thickness(g: GapGeometry, xp) -> np.ndarray:
    """delta(x') = eps + h1(x') - h(x') on the window |x'| <= 2R."""
    xp = _as_xp(xp, g.dim)
    if np.any(_norm(xp) > g.window * (1 + 1e-12)):
        raise ValueError(f"x' outside the gap window |x'| <= {g.window}")
    return g.epsilon + g.profile.h_upper(xp) - g.profile.h_lower(xp)


def outer_normal(g: GapGeometry, xp) -> np.ndarray:
    """Unit outer normal of D on the lower profile x_d = h(x')."""
    xp = _as_xp(xp, g.dim)
    grad = g.profile.grad_lower(xp)
    s = np.sqrt(1.0 + np.sum(grad * grad, axis=-1))[..., None]
    return np.concatenate([grad, -np.ones_like(s)], axis=-1) / s


def effective_tau0(r1: float, r2: float, alpha: float) -> float:
    if not 0 < r1 < r2:
        raise ValueError("need 0 < r1 < r2")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return (r1**-alpha - r2**-alpha) / (1.0 + alpha)


@dataclass
class ConditionCheck:
    passed: bool
    constants: dict = field(default_factory=dict)
    note: str = ""


@dataclass
class ValidationReport:
    s1: ConditionCheck
    s2: ConditionCheck
    s3: ConditionCheck
    evenness: ConditionCheck
    origin: ConditionCheck
    nested: ConditionCheck | None = None

    @property
    def passed(self) -> bool:
        checks = [self.s1, self.s2, self.s3, self.evenness, self.origin]
        if self.nested is not None:
            checks.append(self.nested)
        return all(c.passed for c in checks)

    def rows(self):
        for name in ("s1", "s2", "s3", "evenness", "origin", "nested"):
            c = getattr(self, name)
            if c is not None:
                yield name, c


def _directions(dim: int) -> np.ndarray:
    m = dim - 1
    if m == 1:
        return np.array([[1.0], [-1.0]])
    dirs = [np.eye(m)[i] * s for i in range(m) for s in (1.0, -1.0)]
    diag = np.ones(m) / math.sqrt(m)
    dirs += [diag, -diag]
    return np.array(dirs)


def _log_slope(r: np.ndarray, v: np.ndarray) -> float:
    ok = (v > 0) & np.isfinite(v)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(r[ok]), np.log(v[ok]), 1)[0])


def validate_conditions(
    g: GapGeometry | GapProfile,
    points_per_decade: int = 200,
    decades: int = 6,
    growth_tol: float = 0.05,
) -> ValidationReport:
    """Sampled check of the structural gap conditions.

    Samples lie on a log-spaced radial grid in B'_{2R} along coordinate and
    diagonal directions.  A condition passes when its fitted constant is
    finite and the corresponding ratio does not grow as |x'| -> 0 (log-log
    slope over the two smallest decades above ``-growth_tol``).
    """
    prof = g.profile if isinstance(g, GapGeometry) else g
    dim = prof.dim
    a, b, tau = prof.alpha, prof.beta, prof.tau
    rmax = 2.0 * prof.R
    r = np.logspace(math.log10(rmax) - decades, math.log10(rmax), decades * points_per_decade + 1)
    dirs = _directions(dim)
    xp = r[None, :, None] * dirs[:, None, :]  # (ndir, nr, d-1)
    diff = prof.h_upper(xp) - prof.h_lower(xp)
    small = r <= r[0] * 100.0
    first = r <= r[0] * 10.0

    # (S1)
    ratio = diff / r ** (1 + a)
    tau_fit = float(np.mean(ratio[:, first]))
    expo = float(np.mean([_log_slope(r[small], d_[small]) for d_ in diff]))
    resid = np.abs(diff - tau * r ** (1 + a)) / r ** (1 + a + b)
    K = float(np.max(resid))
    s1_ok = bool(np.all(diff > 0)) and np.isfinite(K) and abs(tau_fit - tau) <= 1e-3 * tau
    if s1_ok and K > 1e-8 * tau:  # below this the residual is rounding noise
        slopes = [_log_slope(r[small], rr[small]) for rr in resid if np.any(rr[small] > 0)]
        s1_ok = not slopes or min(slopes) >= -growth_tol
    s1 = ConditionCheck(bool(s1_ok), {"tau_fit": tau_fit, "exponent_fit": expo, "K": K})

    # (S2)
    gl = np.sqrt(np.sum(prof.grad_lower(xp) ** 2, axis=-1))
    gu = np.sqrt(np.sum(prof.grad_upper(xp) ** 2, axis=-1))
    gmax = np.maximum(gl, gu)
    k1_ratio = gmax / r**a
    kappa1 = float(np.max(k1_ratio))
    slopes = [_log_slope(r[small], kr[small]) for kr in k1_ratio if np.any(kr[small] > 0)]
    s2_ok = np.isfinite(kappa1) and (not slopes or min(slopes) >= -growth_tol)
    s2 = ConditionCheck(bool(s2_ok), {"kappa1": kappa1})

    # (S3): C^{1,alpha} norms, Hoelder seminorm of the gradient from pairs
    # (x, 0) and the mirrored pairs (x, -x).
    def c1a(h, gr):
        vals = h(xp)
        grads = gr(xp)
        g0 = gr(np.zeros((1, dim - 1)))[0]
        semi0 = np.sqrt(np.sum((grads - g0) ** 2, axis=-1)) / r**a
        gm = gr(-xp)
        semi1 = np.sqrt(np.sum((grads - gm) ** 2, axis=-1)) / (2 * r) ** a
        semi = np.maximum(semi0, semi1)
        norm = np.max(np.abs(vals)) + np.max(np.sqrt(np.sum(grads**2, axis=-1))) + np.max(semi)
        sl = [_log_slope(r[small], s_[small]) for s_ in semi if np.any(s_[small] > 0)]
        return norm, (min(sl) if sl else 0.0)

    n_up, sl_up = c1a(prof.h_upper, prof.grad_upper)
    n_lo, sl_lo = c1a(prof.h_lower, prof.grad_lower)
    kappa2 = float(n_up + n_lo)
    s3_ok = np.isfinite(kappa2) and min(sl_up, sl_lo) >= -growth_tol
    s3 = ConditionCheck(bool(s3_ok), {"kappa2": kappa2})

    # evenness of h1 - h in every coordinate on B'_R
    inR = r <= prof.R
    worst = 0.0
    for i in range(dim - 1):
        flip = xp.copy()
        flip[..., i] *= -1.0
        d2 = prof.h_upper(flip) - prof.h_lower(flip)
        worst = max(worst, float(np.max(np.abs(d2 - diff)[:, inR])))
    scale = float(np.max(np.abs(diff[:, inR]))) or 1.0
    even = ConditionCheck(worst <= 1e-12 * scale, {"max_asymmetry": worst})

    z = np.zeros((1, dim - 1))
    h0, h10 = float(prof.h_lower(z)[0]), float(prof.h_upper(z)[0])
    origin = ConditionCheck(abs(h0) <= 1e-14 and abs(h10) <= 1e-14, {"h(0)": h0, "h1(0)": h10})

    nested = None
    if isinstance(g, GapGeometry) and g.dim == 2:
        try:
            nested = ConditionCheck(g.check_nested())
        except ValueError as exc:
            nested = ConditionCheck(False, note=str(exc))
    return ValidationReport(s1, s2, s3, even, origin, nested)


def write_boundary_csv(g: GapGeometry, path, n: int = 800) -> None:
    """Boundary polylines with columns curve, s, x1, x2 (s = arclength)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "s", "x1", "x2"])
        for name, curve in (("outer", g.outer_curve), ("inclusion", g.inner_curve)):
            pts = curve.polyline(n)
            closed = np.vstack([pts, pts[:1]])
            s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))])
            for si, (x1, x2) in zip(s, closed):
                w.writerow([name, f"{si:.12g}", f"{x1:.12g}", f"{x2:.12g}"])
