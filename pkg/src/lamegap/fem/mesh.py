"""Structured O-grid meshes of quadratic (six-node) triangles for the gap domain.

The shell between the inclusion and the outer boundary is swept by
"stations": straight segments from a point on the inclusion boundary to a
point on the outer boundary.  Inside the gap window the segments are
vertical, so each cross-section ``x1 = const`` is crossed by exactly
``n_layers`` elements.  Tangential spacing follows the local shell
thickness, which grades the mesh down to the eps-scale at the narrowest
point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import GapGeometry
from .element import QUAD_POINTS, shape_grads

INCLUSION, OUTER = 1, 2


class MeshError(RuntimeError):
    pass


@dataclass
class MeshParams:
    n_layers: int = 6
    c_g: float = 0.5
    h_max: float = 0.1
    blend: float = 0.6  # angular width over which station lines turn radial

    def refined(self, factor: int = 2) -> "MeshParams":
        return MeshParams(self.n_layers * factor, self.c_g / factor, self.h_max / factor, self.blend)


@dataclass
class GapMesh:
    nodes: np.ndarray  # (N, 2)
    elements: np.ndarray  # (E, 6): v0 v1 v2 m01 m12 m20
    node_tags: np.ndarray  # (N,) 0 interior, INCLUSION, OUTER
    boundary_edges: np.ndarray  # (B, 3): element, local edge (0: v0-v1, 1: v1-v2, 2: v2-v0), tag
    grid_shape: tuple  # (tangential half-levels, radial half-levels)
    n_layers: int
    params: MeshParams | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def jacobians(self) -> np.ndarray:
        """det J at the interior quadrature points, shape (E, q)."""
        X = self.nodes[self.elements]  # (E, 6, 2)
        dN = shape_grads(QUAD_POINTS)  # (q, 6, 2)
        J = np.einsum("eai,qaj->eqij", X, dN)
        return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]

    def check(self, n_layers: int | None = None) -> None:
        """Raise MeshError on inverted elements or a short layer count."""
        det = self.jacobians()
        bad = np.argwhere(det <= 0)
        if len(bad):
            e = bad[0, 0]
            c = self.nodes[self.elements[e, :3]].mean(axis=0)
            raise MeshError(f"{len(bad)} non-positive Jacobians, first in element {e} near {c}")
        want = self.n_layers if n_layers is None else n_layers
        if self.n_layers < want:
            raise MeshError(f"only {self.n_layers} layers across the gap, need {want}")

    def write_csv(self, nodes_path, elements_path) -> None:
        with open(nodes_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x1", "x2", "tag"])
            for i, (p, t) in enumerate(zip(self.nodes, self.node_tags)):
                w.writerow([i, f"{p[0]:.17g}", f"{p[1]:.17g}", int(t)])
        with open(elements_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["element", "v0", "v1", "v2", "m01", "m12", "m20"])
            for i, el in enumerate(self.elements):
                w.writerow([i, *map(int, el)])


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


class _GapStations:
    """Right-half station map u -> (P_in, P_out), u in [0, u_end]."""

    def __init__(self, g: GapGeometry, blend: float):
        self.g = g
        self.inner, self.outer = g.inner_curve, g.outer_curve
        self.W = g.window
        self.th0 = self.inner.theta_window
        self.blend = blend
        self.rho = float(np.linalg.norm(self.inner.arc_point(self.th0) - self.inner.center))
        self.u_end = self.W + (math.pi / 2 - self.th0) * self.rho

    def __call__(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        pin = np.empty((len(u), 2))
        pout = np.empty((len(u), 2))
        win = u <= self.W
        x = u[win]
        pin[win] = np.column_stack([x, self.inner.graph(x)])
        pout[win] = np.column_stack([x, self.outer.graph(x)])
        for idx in np.flatnonzero(~win):
            th = self.th0 + (u[idx] - self.W) / self.rho
            if u[idx] >= self.u_end * (1 - 1e-15):
                th = math.pi / 2
            p = self.inner.arc_point(th)
            radial = (p - self.inner.center) / np.linalg.norm(p - self.inner.center)
            w = float(_smoothstep((th - self.th0) / self.blend))
            d = (1 - w) * np.array([0.0, -1.0]) + w * radial
            d /= np.linalg.norm(d)
            if th == math.pi / 2:
                d = np.array([0.0, 1.0])
                p = np.array([0.0, p[1]])
            pin[idx] = p
            pout[idx] = p + self.outer.hit(p, d) * d
        return pin, pout


def _equidistribute(pin, pout, u, size_fn, n_min: int = 4):
    """Half-level parameter values equidistributing ds/size."""
    thick = np.linalg.norm(pout - pin, axis=1)
    size = size_fn(thick)
    ds = np.maximum(np.linalg.norm(np.diff(pin, axis=0), axis=1), np.linalg.norm(np.diff(pout, axis=0), axis=1))
    dn = ds / (0.5 * (size[1:] + size[:-1]))
    N = np.concatenate([[0.0], np.cumsum(dn)])
    n = max(n_min, int(math.ceil(N[-1])))
    targets = np.linspace(0.0, N[-1], 2 * n + 1)
    return np.interp(targets, N, u), n


def _assemble_grid(pin: np.ndarray, pout: np.ndarray, n_layers: int, mirror_split: int | None,
                   radial=None) -> GapMesh:
    """Build P2 elements from periodic half-level stations.

    ``pin``/``pout`` hold 2*n_st half-level points around the closed ring.
    Cells whose first station index is below ``mirror_split`` use the main
    diagonal, the others the anti-diagonal.
    """
    nt = len(pin)
    if nt % 2:
        raise MeshError("need an even number of tangential half-levels")
    nk = 2 * n_layers + 1
    frac = np.linspace(0.0, 1.0, nk) if radial is None else np.asarray(radial)
    nodes = pin[:, None, :] + frac[None, :, None] * (pout - pin)[:, None, :]
    nodes = nodes.reshape(-1, 2)
    nid = lambda j, k: (j % nt) * nk + k
    tags = np.zeros(nt * nk, dtype=np.int8)
    tags[np.arange(nt) * nk] = INCLUSION
    tags[np.arange(nt) * nk + nk - 1] = OUTER

    elems, bedges = [], []
    n_st = nt // 2
    for s in range(n_st):
        j = 2 * s
        main = mirror_split is None or s < mirror_split
        for m in range(n_layers):
            k = 2 * m
            P = lambda a, b: nid(j + a, k + b)
            if main:
                # diagonal (0,0)-(2,2)
                t1 = [P(0, 0), P(2, 0), P(2, 2), P(1, 0), P(2, 1), P(1, 1)]
                t2 = [P(0, 0), P(2, 2), P(0, 2), P(1, 1), P(1, 2), P(0, 1)]
                # edges touching k = 0 / k = 2M
                b_in = (0, 0)  # t1 edge v0-v1
                b_out = (1, 1)  # t2 edge v1-v2
            else:
                # diagonal (2,0)-(0,2)
                t1 = [P(0, 0), P(2, 0), P(0, 2), P(1, 0), P(1, 1), P(0, 1)]
                t2 = [P(2, 0), P(2, 2), P(0, 2), P(2, 1), P(1, 2), P(1, 1)]
                b_in = (0, 0)
                b_out = (1, 1)
            e0 = len(elems)
            elems.append(t1)
            elems.append(t2)
            if m == 0:
                bedges.append((e0 + b_in[0], b_in[1], INCLUSION))
            if m == n_layers - 1:
                bedges.append((e0 + b_out[0], b_out[1], OUTER))
    elems = np.array(elems, dtype=np.int64)
    bedges = np.array(bedges, dtype=np.int64)

    # orientation: flip clockwise triangles (swap v1<->v2, m01<->m20)
    X = nodes[elems[:, :3]]
    area = 0.5 * ((X[:, 1, 0] - X[:, 0, 0]) * (X[:, 2, 1] - X[:, 0, 1])
                  - (X[:, 2, 0] - X[:, 0, 0]) * (X[:, 1, 1] - X[:, 0, 1]))
    flip = area < 0
    if np.any(flip):
        elems[flip] = elems[flip][:, [0, 2, 1, 5, 4, 3]]
        # edge ids: v0-v1 <-> v2-v0, v1-v2 stays
        fe = flip[bedges[:, 0]]
        le = bedges[fe, 1]
        bedges[fe, 1] = np.where(le == 0, 2, np.where(le == 2, 0, 1))
    return GapMesh(nodes, elems, tags, bedges, (nt, nk), n_layers)


def build_gap_mesh(g: GapGeometry, params: MeshParams | None = None, eps_floor: float = 1e-6) -> GapMesh:
    """Graded O-grid mesh of Omega = D minus closure(D1) for a 2-D geometry."""
    params = params or MeshParams()
    if g.dim != 2:
        raise MeshError("meshing is only available in 2-D")
    if g.epsilon < eps_floor:
        raise MeshError(f"epsilon {g.epsilon:g} below the meshing floor {eps_floor:g}")
    st = _GapStations(g, params.blend)
    a = g.alpha
    w0 = (g.epsilon / g.tau) ** (1.0 / (1.0 + a))
    u_win = np.concatenate([[0.0], np.geomspace(w0 * 1e-3, st.W, 6000)])
    u_arc = np.linspace(st.W, st.u_end, 3001)[1:]
    u = np.concatenate([u_win, u_arc])
    pin, pout = st(u)
    size_fn = lambda t: np.minimum(params.h_max, params.c_g * t)
    uh, n_half = _equidistribute(pin, pout, u, size_fn)
    pr_in, pr_out = st(uh)  # 2*n_half + 1 half-levels, bottom centre to top
    pr_in[0, 0] = pr_out[0, 0] = 0.0
    # right half bottom->top, then mirrored left half top->bottom
    ml_in = pr_in[-2:0:-1] * np.array([-1.0, 1.0])
    ml_out = pr_out[-2:0:-1] * np.array([-1.0, 1.0])
    ring_in = np.vstack([pr_in, ml_in])
    ring_out = np.vstack([pr_out, ml_out])
    mesh = _assemble_grid(ring_in, ring_out, params.n_layers, mirror_split=n_half)
    mesh.params = params
    mesh.info.update(
        stations=2 * n_half,
        min_thickness=float(np.min(np.linalg.norm(ring_out - ring_in, axis=1))),
        epsilon=g.epsilon,
    )
    mesh.check(params.n_layers)
    return mesh


def build_annulus_mesh(r_in: float, r_out: float, n_theta: int = 48, n_layers: int = 6,
                       center=(0.0, 0.0)) -> GapMesh:
    """Quasi-uniform mesh of a concentric annulus (smoke geometry)."""
    if not 0 < r_in < r_out:
        raise MeshError("need 0 < r_in < r_out")
    th = -math.pi / 2 + np.linspace(0.0, 2 * math.pi, 2 * n_theta, endpoint=False)
    dirs = np.column_stack([np.cos(th), np.sin(th)])
    c = np.asarray(center, dtype=float)
    mesh = _assemble_grid(c + r_in * dirs, c + r_out * dirs, n_layers, mirror_split=None)
    mesh.info.update(r_in=r_in, r_out=r_out)
    mesh.check()
    return mesh
