"""Experiment configuration, eps-sweeps, rate fits and asymptotic comparisons."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .auxiliary import BoundaryField
from .concentration import (ConcentrationSystem, HypothesisError, StarredData, asymptotic_gradient_2d,
                            estimate_starred, example_asymptotic, max_gradient_on_axis, reconstruct_field,
                            solve_system)
from .constants import Lame, example_constants
from .fem import ElasticityTensor, LameSolver, MeshParams, PointLocator, build_gap_mesh
from .geometry import CurvilinearSquareGeometry, GapGeometry, GapProfile, power_profile

log = logging.getLogger(__name__)

EPS_FLOOR = 1e-6


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    geometry: dict = field(default_factory=lambda: {"kind": "power", "alpha": 0.5, "tau": 1.0, "beta": 0.5,
                                                    "R": 0.25, "lower_curvature": 0.5})
    lame: dict = field(default_factory=lambda: {"lam": 1.0, "mu": 1.0})
    phi: dict = field(default_factory=lambda: {"kind": "shear_stretch"})
    eps_list: list = field(default_factory=lambda: [1e-3, 1e-4, 1e-5])
    starred_eps: list | None = None
    mesh: dict = field(default_factory=dict)
    outputs: str = "out"
    seed: int = 0
    workers: int = 1
    certify: bool = True
    certify_rtol: float = 0.01
    eps_floor: float = EPS_FLOOR

    def __post_init__(self):
        self.eps_list = [float(e) for e in self.eps_list]
        _check_eps(self.eps_list, self.eps_floor, "eps_list")
        if self.starred_eps is not None:
            self.starred_eps = [float(e) for e in self.starred_eps]
            _check_eps(self.starred_eps, self.eps_floor, "starred_eps")
        kind = self.geometry.get("kind", "power")
        if kind not in ("power", "curvilinear_square", "custom"):
            raise ConfigError(f"unknown geometry kind {kind!r}")
        self.mesh_params()  # validate keys early

    @property
    def lame_pair(self) -> Lame:
        return Lame(float(self.lame.get("lam", 1.0)), float(self.lame.get("mu", 1.0))).check(2)

    @property
    def tensor(self) -> ElasticityTensor:
        lp = self.lame_pair
        return ElasticityTensor(lp.lam, lp.mu)

    def mesh_params(self) -> MeshParams:
        allowed = {"n_layers", "c_g", "h_max", "blend", "solver", "tol"}
        bad = set(self.mesh) - allowed
        if bad:
            raise ConfigError(f"unknown mesh keys {sorted(bad)}")
        kw = {k: self.mesh[k] for k in ("n_layers", "c_g", "h_max", "blend") if k in self.mesh}
        return MeshParams(**kw)

    @property
    def solver(self) -> str:
        return self.mesh.get("solver", "direct")

    @property
    def tol(self) -> float:
        return float(self.mesh.get("tol", 1e-10))

    def geometry_at(self, eps: float) -> GapGeometry:
        return build_geometry(self.geometry, eps)

    def boundary_field(self) -> BoundaryField:
        return build_phi(self.phi)

    @property
    def all_eps(self) -> list:
        eps = set(self.eps_list) | set(self.starred_eps or [])
        return sorted(eps, reverse=True)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_eps(eps, floor, name):
    if len(eps) == 0:
        raise ConfigError(f"{name} is empty")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError(f"{name} must be strictly decreasing")
    if min(eps) < floor:
        raise ConfigError(f"{name} contains values below the floor {floor:g}")


def load_config(path) -> ExperimentConfig:
    """Read a YAML (or JSON) experiment description."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    known = set(ExperimentConfig.__dataclass_fields__)
    bad = set(data) - known
    if bad:
        raise ConfigError(f"unknown config keys {sorted(bad)}")
    return ExperimentConfig(**data)


def _custom_profile(spec: dict) -> GapProfile:
    """Profiles as sums of c*|x|^p terms: ``upper``/``lower`` lists of [c, p]."""

    def make(terms):
        terms = [(float(c), float(p)) for c, p in terms]
        for _, p in terms:
            if p <= 1:
                raise ConfigError("custom profile powers must exceed 1")

        def h(xp):
            r = np.sqrt(np.sum(xp * xp, axis=-1))
            return sum(c * r**p for c, p in terms) if terms else 0.0 * r

        def g(xp):
            r = np.sqrt(np.sum(xp * xp, axis=-1))
            with np.errstate(divide="ignore", invalid="ignore"):
                fac = sum(np.where(r > 0, c * p * r ** (p - 2), 0.0) for c, p in terms) if terms else 0.0 * r
            return fac[..., None] * xp

        return h, g

    hu, gu = make(spec.get("upper", []))
    hl, gl = make(spec.get("lower", []))
    return GapProfile(float(spec["alpha"]), float(spec.get("beta", 0.5)), float(spec["tau"]),
                      float(spec.get("R", 0.25)), hl, hu, gl, gu, 2, "custom")


def build_geometry(spec: dict, eps: float) -> GapGeometry:
    kind = spec.get("kind", "power")
    if kind == "power":
        prof = power_profile(float(spec.get("alpha", 0.5)), float(spec.get("tau", 1.0)),
                             float(spec.get("beta", 0.5)), float(spec.get("R", 0.25)),
                             float(spec.get("lower_curvature", 0.5)), float(spec.get("correction", 0.0)))
        return GapGeometry(prof, eps)
    if kind == "curvilinear_square":
        return CurvilinearSquareGeometry(float(spec.get("r1", 1.0)), float(spec.get("r2", 2.0)),
                                         float(spec.get("alpha", 0.5)), eps, spec.get("r0", 0.4))
    if kind == "custom":
        return GapGeometry(_custom_profile(spec), eps)
    raise ConfigError(f"unknown geometry kind {kind!r}")


def _poly_field(terms) -> BoundaryField:
    """phi = sum of (c1, c2) x1^i x2^j for terms [i, j, c1, c2]."""
    terms = [(int(i), int(j), float(a), float(b)) for i, j, a, b in terms]

    def value(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for i, j, a, b in terms:
            m = x[..., 0] ** i * x[..., 1] ** j
            out[..., 0] += a * m
            out[..., 1] += b * m
        return out

    def grad(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        for i, j, a, b in terms:
            d1 = i * x[..., 0] ** max(i - 1, 0) * x[..., 1] ** j if i else 0.0 * x[..., 0]
            d2 = j * x[..., 0] ** i * x[..., 1] ** max(j - 1, 0) if j else 0.0 * x[..., 0]
            out[..., 0, 0] += a * d1
            out[..., 0, 1] += a * d2
            out[..., 1, 0] += b * d1
            out[..., 1, 1] += b * d2
        return out

    return BoundaryField(value, grad, 2, "polynomial")


PHI_CATALOG = {
    # generic: both parity classes present, so both leading determinants are nonzero
    "shear_stretch": lambda: BoundaryField.linear([[0.0, 1.0], [0.0, 1.0]], name="shear_stretch"),
    "linear_shear": lambda: BoundaryField.linear([[0.0, 1.0], [0.0, 0.0]], name="linear_shear"),
    "stretch": lambda: BoundaryField.linear([[0.0, 0.0], [0.0, 1.0]], name="stretch"),
    # rigid trace: the exact solution is the rotation itself
    "rotation": lambda: BoundaryField.rigid(3),
    "zero": lambda: BoundaryField.zero(),
}


# entries for which the leading-order hypotheses fail on purpose
DEGENERATE_PHI = frozenset({"rotation", "zero"})


def build_phi(spec: dict) -> BoundaryField:
    kind = spec.get("kind", "shear_stretch")
    if kind == "polynomial":
        phi = _poly_field(spec.get("terms", []))
    elif kind in PHI_CATALOG:
        phi = PHI_CATALOG[kind]()
    else:
        raise ConfigError(f"unknown phi kind {kind!r}; choose from {sorted(PHI_CATALOG) + ['polynomial']}")
    return phi.normalized()


# ---------------------------------------------------------------------------
# single point
# ---------------------------------------------------------------------------


@dataclass
class PointSolution:
    """All sub-problem fields at one eps on one mesh."""

    geometry: GapGeometry
    mesh: object
    solver: LameSolver
    fields: list
    system: ConcentrationSystem
    locator: PointLocator


def solve_point(cfg: ExperimentConfig, eps: float, refine: int = 0) -> PointSolution:
    g = cfg.geometry_at(eps)
    params = cfg.mesh_params()
    for _ in range(refine):
        params = params.refined()
    mesh = build_gap_mesh(g, params, cfg.eps_floor)
    solver = LameSolver(mesh, cfg.tensor, cfg.solver, cfg.tol)
    phi = cfg.boundary_field()
    fields = [solver.solve(0, phi)] + [solver.solve(i) for i in (1, 2, 3)]
    U = np.stack([f.vector for f in fields])
    G = U @ (solver.K @ U.T)
    system = solve_system(G[1:, 1:], -G[0, 1:], eps)
    return PointSolution(g, mesh, solver, fields, system, PointLocator(mesh))


def gap_points(g: GapGeometry):
    """Gap midpoint on x' = 0 and at |x'| = eps^(1/(1+alpha))."""
    eps, a = g.epsilon, g.alpha
    x0 = np.array([0.0, float(g.lower(0.0)) + 0.5 * eps])
    w = eps ** (1.0 / (1.0 + a))
    lo, hi = float(g.lower(w)), float(g.upper(w))
    x1 = np.array([w, 0.5 * (lo + hi)])
    return x0, x1


@dataclass
class SweepRecord:
    eps: float
    A: list = field(default_factory=list)
    Q: list = field(default_factory=list)
    C: list = field(default_factory=list)
    max_grad_axis: float = float("nan")
    grad_center: list = field(default_factory=list)
    grad_side: list = field(default_factory=list)
    certified: bool = False
    cert_change: float = float("nan")
    n_nodes: int = 0
    residual: float = float("nan")
    status: str = "ok"
    message: str = ""
    prediction: list = field(default_factory=list)
    rel_error: float = float("nan")
    timings: dict = field(default_factory=dict)

    @property
    def system(self) -> ConcentrationSystem:
        return solve_system(np.array(self.A), np.array(self.Q), self.eps)


def _record_from(ps: PointSolution, rec: SweepRecord):
    sy = ps.system
    rec.A = sy.A.tolist()
    rec.Q = sy.Y.tolist()
    rec.C = sy.C.tolist()
    rec.residual = max(sy.residual, *(f.residual for f in ps.fields))
    rec.n_nodes = ps.mesh.n_nodes
    g = ps.geometry
    n_ax = 2 * ps.mesh.n_layers + 1
    rec.max_grad_axis = max_gradient_on_axis(ps.fields, sy.C, g.epsilon, float(g.lower(0.0)), n_ax, ps.locator)
    x0, x1 = gap_points(g)
    rec.grad_center = reconstruct_field(ps.fields, sy.C, x0, ps.locator).ravel().tolist()
    rec.grad_side = reconstruct_field(ps.fields, sy.C, x1, ps.locator).ravel().tolist()


def _relative_change(s0: ConcentrationSystem, s1: ConcentrationSystem) -> float:
    """Largest relative change of the a_ij and Q_j between two meshes.

    Entries below 1e-9 of the largest one are zero by symmetry and skipped.
    """
    v0 = np.concatenate([s0.A.ravel(), s0.Y])
    v1 = np.concatenate([s1.A.ravel(), s1.Y])
    scale = np.max(np.abs(v1))
    keep = np.abs(v1) > 1e-9 * scale
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(v1[keep] - v0[keep]) / np.abs(v1[keep])))


def run_point(cfg: ExperimentConfig, eps: float) -> SweepRecord:
    rec = SweepRecord(eps=float(eps))
    try:
        t0 = time.perf_counter()
        ps = solve_point(cfg, eps, 0)
        rec.timings["coarse"] = time.perf_counter() - t0
        if cfg.certify:
            t0 = time.perf_counter()
            fine = solve_point(cfg, eps, 1)
            rec.timings["fine"] = time.perf_counter() - t0
            rec.cert_change = _relative_change(ps.system, fine.system)
            rec.certified = rec.cert_change < cfg.certify_rtol
            ps = fine
        _record_from(ps, rec)
    except Exception as exc:  # per-point failures are recorded, the sweep continues
        log.warning("eps=%g failed: %s", eps, exc)
        rec.status, rec.message, rec.certified = "error", f"{type(exc).__name__}: {exc}", False
    return rec


def run_sweep(cfg: ExperimentConfig, eps_list=None, workers: int | None = None) -> list[SweepRecord]:
    """One independent record per eps, returned in the order of ``eps_list``."""
    eps_list = list(cfg.eps_list if eps_list is None else eps_list)
    workers = cfg.workers if workers is None else workers
    if workers <= 1 or len(eps_list) == 1:
        return [run_point(cfg, e) for e in eps_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_point, [cfg] * len(eps_list), eps_list))


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = (
    ["eps"] + [f"a{i}{j}" for i in range(1, 4) for j in range(1, 4)] + ["Q1", "Q2", "Q3", "C1", "C2", "C3"]
    + ["max_grad_axis", "g11_center", "g12_center", "g21_center", "g22_center",
       "g11_side", "g12_side", "g21_side", "g22_side", "certified", "cert_change", "n_nodes",
       "residual", "status", "message"]
)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def record_row(r: SweepRecord) -> dict:
    nan4 = [float("nan")] * 4
    A = np.array(r.A) if r.A else np.full((3, 3), np.nan)
    row = {"eps": r.eps}
    for i in range(3):
        for j in range(3):
            row[f"a{i + 1}{j + 1}"] = float(A[i, j])
    for k, name in enumerate(("Q1", "Q2", "Q3")):
        row[name] = r.Q[k] if r.Q else float("nan")
    for k, name in enumerate(("C1", "C2", "C3")):
        row[name] = r.C[k] if r.C else float("nan")
    row["max_grad_axis"] = r.max_grad_axis
    for tag, vals in (("center", r.grad_center or nan4), ("side", r.grad_side or nan4)):
        for name, v in zip(("g11", "g12", "g21", "g22"), vals):
            row[f"{name}_{tag}"] = v
    row.update(certified=r.certified, cert_change=r.cert_change, n_nodes=r.n_nodes, residual=r.residual,
               status=r.status, message=r.message)
    return row


def write_sweep_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in records:
            row = record_row(r)
            w.writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list[SweepRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            r = SweepRecord(eps=float(row["eps"]))
            r.A = [[float(row[f"a{i}{j}"]) for j in range(1, 4)] for i in range(1, 4)]
            r.Q = [float(row[f"Q{k}"]) for k in range(1, 4)]
            r.C = [float(row[f"C{k}"]) for k in range(1, 4)]
            r.max_grad_axis = float(row["max_grad_axis"])
            r.grad_center = [float(row[f"{n}_center"]) for n in ("g11", "g12", "g21", "g22")]
            r.grad_side = [float(row[f"{n}_side"]) for n in ("g11", "g12", "g21", "g22")]
            r.certified = row["certified"] == "1"
            r.cert_change = float(row["cert_change"])
            r.n_nodes = int(row["n_nodes"])
            r.residual = float(row["residual"])
            r.status, r.message = row["status"], row["message"]
            out.append(r)
    return out


# ---------------------------------------------------------------------------
# fits and comparisons
# ---------------------------------------------------------------------------


@dataclass
class RateFit:
    quantity: str
    slope: float
    intercept: float
    r2: float
    n: int


def _select(r: SweepRecord, selector):
    if callable(selector):
        return float(selector(r))
    return float(record_row(r)[selector])


def fit_rate(records, selector="max_grad_axis", certified_only: bool = True) -> RateFit:
    """Least squares of log|quantity| against log eps."""
    recs = [r for r in records if r.status == "ok" and (r.certified or not certified_only)]
    if len(recs) < 3:
        raise ValueError("need at least three usable records")
    x = np.log([r.eps for r in recs])
    y = np.array([_select(r, selector) for r in recs])
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise ValueError("rate fits need positive quantities")
    ly = np.log(y)
    slope, intercept = np.polyfit(x, ly, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    name = selector if isinstance(selector, str) else getattr(selector, "__name__", "custom")
    return RateFit(name, float(slope), float(intercept), r2, len(recs))


def starred_from_records(records, cfg: ExperimentConfig) -> StarredData:
    eps = cfg.starred_eps or cfg.eps_list
    by_eps = {r.eps: r for r in records if r.status == "ok" and r.certified}
    missing = [e for e in eps if e not in by_eps]
    if missing:
        raise ValueError(f"no certified record for starred eps {missing}")
    g = cfg.geometry_at(eps[0])
    st = estimate_starred([by_eps[e].system for e in eps], g.alpha, 2, g.tau, cfg.lame_pair)
    st.provenance["phi"] = cfg.phi
    st.provenance["geometry"] = cfg.geometry
    return st


@dataclass
class ComparisonRow:
    eps: float
    location: str
    variant: str
    component: str
    fem: float
    predicted: float
    rel_error: float


@dataclass
class ComparisonTable:
    rows: list
    note: str = ""
    monotone: dict = field(default_factory=dict)

    def errors(self, location="center", variant="leading"):
        sel = [r for r in self.rows if r.location == location and r.variant == variant]
        return [r.eps for r in sel], [r.rel_error for r in sel]


def _predict(cfg, g, st, x, variant, ec):
    phi = cfg.boundary_field()
    if variant == "leading":
        if isinstance(g, CurvilinearSquareGeometry):
            return example_asymptotic(g, cfg.lame_pair, phi, st, x, ec, corrected=False).gradient
        return asymptotic_gradient_2d(st, g, cfg.lame_pair, phi, x).gradient
    return example_asymptotic(g, cfg.lame_pair, phi, st, x, ec, corrected=True).gradient


def compare_asymptotics(records, starred: StarredData, cfg: ExperimentConfig) -> ComparisonTable:
    """Relative error of the dominant predicted component against FEM.

    Only certified records enter the table.  For the curvilinear-square
    geometry a second variant with the geometric correction factor is added.
    """
    recs = sorted([r for r in records if r.status == "ok" and r.certified and r.eps in cfg.eps_list],
                  key=lambda r: -r.eps)
    g0 = cfg.geometry_at(recs[0].eps if recs else cfg.eps_list[0])
    variants = ["leading"]
    ec = None
    if isinstance(g0, CurvilinearSquareGeometry):
        variants.append("corrected")
        ec = example_constants(g0, cfg.lame_pair)
    rows = []
    try:
        for r in recs:
            g = cfg.geometry_at(r.eps)
            x0, x1 = gap_points(g)
            for loc, x, fem in (("center", x0, r.grad_center), ("side", x1, r.grad_side)):
                fem = np.array(fem).reshape(2, 2)
                for var in variants:
                    pred = _predict(cfg, g, starred, x, var, ec)
                    k = np.unravel_index(np.argmax(np.abs(pred)), pred.shape)
                    err = abs(pred[k] - fem[k]) / abs(fem[k])
                    rows.append(ComparisonRow(r.eps, loc, var, f"g{k[0] + 1}{k[1] + 1}", float(fem[k]),
                                              float(pred[k]), float(err)))
    except HypothesisError as exc:
        msg = str(exc)
        return ComparisonTable([], note=msg if "hypotheses unmet" in msg else f"hypotheses unmet: {msg}")
    table = ComparisonTable(rows)
    for loc in ("center", "side"):
        for var in variants:
            _, errs = table.errors(loc, var)
            table.monotone[f"{loc}/{var}"] = bool(all(b < a for a, b in zip(errs, errs[1:])))
    return table


def attach_predictions(records, table: ComparisonTable, variant: str = "leading") -> None:
    """Copy the x' = 0 prediction and relative error onto the matching records."""
    rows = {r.eps: r for r in table.rows if r.location == "center" and r.variant == variant}
    for rec in records:
        row = rows.get(rec.eps)
        if row is not None:
            rec.prediction = [row.component, row.predicted]
            rec.rel_error = row.rel_error


def write_comparison_csv(table: ComparisonTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "location", "variant", "component", "fem", "predicted", "rel_error", "note"])
        if not table.rows:
            w.writerow(["", "", "", "", "", "", "", table.note])
        for r in table.rows:
            w.writerow([_fmt(r.eps), r.location, r.variant, r.component, _fmt(r.fem), _fmt(r.predicted),
                        _fmt(r.rel_error), ""])


def tau_bounds(g: GapGeometry, n: int = 2000) -> tuple[float, float]:
    """Sampled tau1 <= (h1 - h)/|x'|^(1+alpha) <= tau2 on the window."""
    r = np.geomspace(g.window * 1e-6, g.window, n)
    q = g.profile.difference(r) / r ** (1 + g.alpha)
    return float(q.min()), float(q.max())


def constants_table(cfg: ExperimentConfig) -> list[tuple]:
    """Rows (name, alpha, tau, value) of the closed-form constants."""
    from . import constants as K

    g = cfg.geometry_at(cfg.eps_list[0])
    a, t, b = g.alpha, g.tau, g.profile.beta
    rows = [("gamma_alpha", a, t, K.gamma_alpha(a)), ("M_alpha_tau", a, t, K.m_alpha_tau(a, t))]
    L = K.lame_row(2, cfg.lame_pair)
    rows += [("L1", a, t, L[0]), ("L2", a, t, L[1])]
    rows.append(("rest_exponent_2d", a, t, K.rest_exponent_2d(a, b)))
    for d in (3, 4, 5):
        rows.append((f"rest_exponent_hd_d{d}", a, t, K.rest_exponent_hd(a, d)))
    te = K.tilde_eps(a, b)
    rows.append(("tilde_eps", a, t, te.exponent))
    if isinstance(g, CurvilinearSquareGeometry):
        ec = K.example_constants(g, cfg.lame_pair)
        rows.append(("tau0", a, t, ec.tau0))
        rows.append(("C_star", a, t, ec.C_star))
        for i in (0, 1):
            rows.append((f"K_star_{i + 1}", a, t, float(ec.K_star[i])))
            rows.append((f"G_star_{i + 1}", a, t, float(ec.G_star[i])))
    return rows


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def finite(x) -> bool:
    return x is not None and math.isfinite(x)
