"""Plane-strain Lame sub-problems on a GapMesh.

Degrees of freedom are interleaved: ``2*node + component``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..auxiliary import BoundaryField, RigidBasis
from .element import (EDGES, QUAD_POINTS, QUAD_WEIGHTS, REF_NODES, ElasticityTensor, edge_reference,
                      shape_grads, shape_values)
from .mesh import INCLUSION, OUTER, GapMesh


class SolverError(RuntimeError):
    pass


def _element_geometry(mesh: GapMesh, xi: np.ndarray, elems=None):
    """Physical shape gradients and det J at reference points xi (q, 2)."""
    el = mesh.elements if elems is None else mesh.elements[elems]
    X = mesh.nodes[el]  # (E, 6, 2)
    dN = shape_grads(xi)  # (q, 6, 2)
    J = np.einsum("eai,qaj->eqij", X, dN)  # J_ij = dx_i/dxi_j
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / det
    inv[..., 1, 1] = J[..., 0, 0] / det
    inv[..., 0, 1] = -J[..., 0, 1] / det
    inv[..., 1, 0] = -J[..., 1, 0] / det
    dNx = np.einsum("qaj,eqji->eqai", dN, inv)  # dN_a/dx_i
    return dNx, det


def _strain_operator(dNx: np.ndarray) -> np.ndarray:
    """B such that (e11, e22, 2e12) = B @ u_e, shape (E, q, 3, 12)."""
    E, q, n, _ = dNx.shape
    B = np.zeros((E, q, 3, 2 * n))
    B[..., 0, 0::2] = dNx[..., 0]
    B[..., 1, 1::2] = dNx[..., 1]
    B[..., 2, 0::2] = dNx[..., 1]
    B[..., 2, 1::2] = dNx[..., 0]
    return B


def element_dofs(mesh: GapMesh) -> np.ndarray:
    el = mesh.elements
    return np.stack([2 * el, 2 * el + 1], axis=-1).reshape(len(el), -1)


def assemble_stiffness(mesh: GapMesh, tensor: ElasticityTensor) -> sp.csr_matrix:
    """Global stiffness K with u^T K v = integral of (C e(u), e(v))."""
    dNx, det = _element_geometry(mesh, QUAD_POINTS)
    if np.any(det <= 0):
        raise SolverError("inverted element encountered during assembly")
    B = _strain_operator(dNx)
    D = tensor.voigt()
    w = det * QUAD_WEIGHTS  # (E, q)
    Ke = np.einsum("eq,eqki,kl,eqlj->eij", w, B, D, B, optimize=True)
    dofs = element_dofs(mesh)
    rows = np.repeat(dofs, dofs.shape[1], axis=1).ravel()
    cols = np.tile(dofs, (1, dofs.shape[1])).ravel()
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


@dataclass
class FieldSolution:
    mesh: GapMesh
    tensor: ElasticityTensor
    index: int
    values: np.ndarray  # (N, 2) nodal displacements
    residual: float

    @property
    def vector(self) -> np.ndarray:
        return self.values.reshape(-1)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x1", "x2", "u1", "u2"])
            for i, (p, u) in enumerate(zip(self.mesh.nodes, self.values)):
                w.writerow([i, f"{p[0]:.17g}", f"{p[1]:.17g}", f"{u[0]:.17g}", f"{u[1]:.17g}"])


class LameSolver:
    """Shared factorization of the interior block for all Dirichlet sub-problems.

    ``method="direct"`` uses a sparse LU of the SPD block; ``method="cg"``
    runs preconditioned conjugate gradients with 2x2 nodal block-Jacobi.
    """

    def __init__(self, mesh: GapMesh, tensor: ElasticityTensor, method: str = "direct", tol: float = 1e-10):
        if method not in ("direct", "cg"):
            raise ValueError("method must be 'direct' or 'cg'")
        self.mesh, self.tensor, self.method, self.tol = mesh, tensor, method, tol
        self.K = assemble_stiffness(mesh, tensor)
        bnodes = np.flatnonzero(mesh.node_tags > 0)
        bd = np.zeros(2 * mesh.n_nodes, dtype=bool)
        bd[2 * bnodes] = bd[2 * bnodes + 1] = True
        self.bdofs = np.flatnonzero(bd)
        self.fdofs = np.flatnonzero(~bd)
        Kc = self.K.tocsc()
        self.Kff = Kc[self.fdofs][:, self.fdofs].tocsc()
        self.Kfb = Kc[self.fdofs][:, self.bdofs].tocsr()
        if method == "direct":
            try:
                self._lu = spla.splu(self.Kff, permc_spec="MMD_AT_PLUS_A",
                                     options=dict(SymmetricMode=True))
            except RuntimeError as exc:  # singular factor
                raise SolverError(f"factorization failed: {exc}") from exc
        else:
            d = self.Kff.diagonal()
            nb = len(self.fdofs) // 2
            # free dofs come in (x, y) pairs of the same node
            blocks = np.zeros((nb, 2, 2))
            Kd = self.Kff.tocsr()
            idx = np.arange(nb)
            blocks[:, 0, 0] = d[0::2]
            blocks[:, 1, 1] = d[1::2]
            blocks[:, 0, 1] = np.asarray(Kd[2 * idx, 2 * idx + 1]).ravel()
            blocks[:, 1, 0] = blocks[:, 0, 1]
            inv = np.linalg.inv(blocks)
            self._prec = spla.LinearOperator(
                self.Kff.shape, matvec=lambda r: np.einsum("nij,nj->ni", inv, r.reshape(-1, 2)).ravel()
            )

    def dirichlet_values(self, index: int, phi: BoundaryField | None = None) -> np.ndarray:
        """Nodal boundary data for sub-problem ``index`` (zero at interior nodes)."""
        mesh = self.mesh
        vals = np.zeros((mesh.n_nodes, 2))
        inc = mesh.node_tags == INCLUSION
        out = mesh.node_tags == OUTER
        if index == 0:
            if phi is None:
                raise ValueError("sub-problem 0 needs boundary data phi")
            vals[out] = phi.value(mesh.nodes[out])
        else:
            vals[inc] = RigidBasis(2).value(index, mesh.nodes[inc])
        return vals

    def solve_dirichlet(self, nodal: np.ndarray) -> tuple[np.ndarray, float]:
        u = np.asarray(nodal, dtype=float).reshape(-1).copy()
        ub = u[self.bdofs]
        rhs = -(self.Kfb @ ub)
        if self.method == "direct":
            uf = self._lu.solve(rhs)
        else:
            uf, info = spla.cg(self.Kff, rhs, rtol=self.tol * 1e-2, atol=0.0, M=self._prec,
                               maxiter=20 * len(rhs))
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge (info={info})")
        nr = np.linalg.norm(rhs)
        res = np.linalg.norm(self.Kff @ uf - rhs) / nr if nr > 0 else 0.0
        if res > self.tol:
            raise SolverError(f"relative residual {res:.2e} above {self.tol:.0e}")
        u[self.fdofs] = uf
        return u.reshape(-1, 2), float(res)

    def solve(self, index: int, phi: BoundaryField | None = None) -> FieldSolution:
        vals, res = self.solve_dirichlet(self.dirichlet_values(index, phi))
        return FieldSolution(self.mesh, self.tensor, index, vals, res)


def solve_subproblem(mesh: GapMesh, tensor: ElasticityTensor, index: int,
                     phi: BoundaryField | None = None, solver: LameSolver | None = None) -> FieldSolution:
    solver = solver or LameSolver(mesh, tensor)
    return solver.solve(index, phi)


def energy_inner(u: FieldSolution, v: FieldSolution, K: sp.spmatrix | None = None) -> float:
    """Integral over Omega of (C e(u), e(v))."""
    if u.mesh is not v.mesh:
        raise ValueError("fields live on different meshes")
    if u.tensor != v.tensor:
        raise ValueError("fields use different elasticity tensors")
    K = assemble_stiffness(u.mesh, u.tensor) if K is None else K
    return float(u.vector @ (K @ v.vector))


def strain_l2(mesh: GapMesh, values: np.ndarray) -> float:
    """||e(u)||_{L2(Omega)} for nodal values (N, 2)."""
    dNx, det = _element_geometry(mesh, QUAD_POINTS)
    ue = values[mesh.elements]  # (E, 6, 2)
    G = np.einsum("eai,eqaj->eqij", ue, dNx)
    e = 0.5 * (G + np.swapaxes(G, -1, -2))
    return float(np.sqrt(np.sum(det * QUAD_WEIGHTS * np.sum(e * e, axis=(-1, -2)))))


def element_gradients(mesh: GapMesh, values: np.ndarray, xi: np.ndarray = QUAD_POINTS):
    """Gradients (E, q, 2, 2) of nodal values and the physical points (E, q, 2)."""
    dNx, _ = _element_geometry(mesh, xi)
    G = np.einsum("eai,eqaj->eqij", values[mesh.elements], dNx)
    pts = np.einsum("qa,eai->eqi", shape_values(xi), mesh.nodes[mesh.elements])
    return G, pts


def boundary_flux_functional(u: FieldSolution, j: int, tag: int = INCLUSION, n_gauss: int = 5) -> float:
    """Integral over the inclusion boundary of (sigma(u) nu) . psi_j.

    ``nu`` is the unit normal pointing into Omega (out of the inclusion), so
    that minus this value reproduces the volume form of a_ij.
    """
    mesh = u.mesh
    be = mesh.boundary_edges[mesh.boundary_edges[:, 2] == tag]
    t, w = np.polynomial.legendre.leggauss(n_gauss)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    basis = RigidBasis(2)
    total = 0.0
    for edge in range(3):
        sel = be[be[:, 1] == edge, 0]
        if len(sel) == 0:
            continue
        xi = edge_reference(edge, t)  # (g, 2)
        dNx, _ = _element_geometry(mesh, xi, sel)
        N = shape_values(xi)  # (g, 6)
        X = mesh.nodes[mesh.elements[sel]]  # (E, 6, 2)
        x = np.einsum("ga,eai->egi", N, X)
        a, b, _ = EDGES[edge]
        tang_ref = REF_NODES[b] - REF_NODES[a]
        dN = shape_grads(xi)  # (g, 6, 2)
        dxdt = np.einsum("eai,gaj,j->egi", X, dN, tang_ref)
        ds = np.linalg.norm(dxdt, axis=-1)
        nrm = np.stack([dxdt[..., 1], -dxdt[..., 0]], axis=-1) / ds[..., None]
        cen = X[:, :3].mean(axis=1)[:, None, :]
        sign = np.sign(np.sum((cen - x) * nrm, axis=-1, keepdims=True))
        nrm = nrm * sign  # into the element, i.e. into Omega
        ue = u.values[mesh.elements[sel]]
        G = np.einsum("eai,egaj->egij", ue, dNx)
        trac = np.einsum("egij,egj->egi", u.tensor.stress(G), nrm)
        psi = basis.value(j, x)
        total += float(np.sum(np.sum(trac * psi, axis=-1) * ds * w))
    return total


class PointLocator:
    """Element lookup by bounding boxes plus a Newton inverse of the P2 map."""

    def __init__(self, mesh: GapMesh):
        self.mesh = mesh
        X = mesh.nodes[mesh.elements]
        pad = 1e-9 * (X.max(axis=1) - X.min(axis=1)).max(axis=1, keepdims=True)
        self.lo = X.min(axis=1) - pad
        self.hi = X.max(axis=1) + pad
        self.X = X

    def inverse_map(self, e: int, x: np.ndarray, iters: int = 30):
        Xe = self.X[e]
        xi = np.array([1 / 3, 1 / 3])
        for _ in range(iters):
            r = shape_values(xi) @ Xe - x
            J = Xe.T @ shape_grads(xi)
            step = np.linalg.solve(J, r)
            xi = xi - step
            if np.max(np.abs(step)) < 1e-14:
                break
        return xi

    def locate(self, x, tol: float = 1e-9):
        """All (element, xi) pairs whose closure contains x."""
        x = np.asarray(x, dtype=float)
        cand = np.flatnonzero(np.all((self.lo <= x) & (x <= self.hi), axis=1))
        hits = []
        for e in cand:
            xi = self.inverse_map(e, x)
            L = np.array([1 - xi[0] - xi[1], xi[0], xi[1]])
            if np.all(L >= -tol):
                hits.append((int(e), xi))
        return hits


def gradient_at(u: FieldSolution, x, locator: PointLocator | None = None, average: bool = True) -> np.ndarray:
    """Gradient (du_a/dx_b) of the quadratic interpolant at x.

    On element interfaces the one-sided values of all touching elements are
    averaged unless ``average`` is False, in which case the first is used.
    """
    loc = locator or PointLocator(u.mesh)
    hits = loc.locate(x)
    if not hits:
        raise ValueError(f"point {x} not located in the mesh")
    grads = []
    for e, xi in (hits if average else hits[:1]):
        dNx, _ = _element_geometry(u.mesh, xi[None, :], [e])
        grads.append(u.values[u.mesh.elements[e]].T @ dNx[0, 0])
    return np.mean(grads, axis=0)


def gradients_at(fields, x, locator: PointLocator | None = None) -> list[np.ndarray]:
    """Gradients of several fields on the same mesh at one point."""
    loc = locator or PointLocator(fields[0].mesh)
    hits = loc.locate(x)
    if not hits:
        raise ValueError(f"point {x} not located in the mesh")
    out = []
    for f in fields:
        gs = []
        for e, xi in hits:
            dNx, _ = _element_geometry(f.mesh, xi[None, :], [e])
            gs.append(f.values[f.mesh.elements[e]].T @ dNx[0, 0])
        out.append(np.mean(gs, axis=0))
    return out


def scalar_laplace_selftest(mesh: GapMesh) -> np.ndarray:
    """Solve -Lap v = 0, v = 1 on the inclusion and 0 outside, on the P1
    refinement of the mesh (four linear triangles per quadratic one).

    Returns nodal values; the discrete maximum principle keeps them in [0, 1]
    when the sub-triangles are non-obtuse enough.
    """
    el = mesh.elements
    sub = np.concatenate([el[:, [0, 3, 5]], el[:, [3, 1, 4]], el[:, [5, 4, 2]], el[:, [3, 4, 5]]])
    P = mesh.nodes[sub]  # (T, 3, 2)
    d1 = P[:, 1] - P[:, 0]
    d2 = P[:, 2] - P[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    # gradients of barycentric functions
    Gm = np.stack([d1, d2], axis=1)  # (T, 2, 2) rows are edge vectors
    inv = np.linalg.inv(Gm)
    gl = np.zeros((len(sub), 3, 2))
    gl[:, 1] = inv[:, :, 0]
    gl[:, 2] = inv[:, :, 1]
    gl[:, 0] = -gl[:, 1] - gl[:, 2]
    Ke = np.abs(area)[:, None, None] * np.einsum("tai,tbi->tab", gl, gl)
    n = mesh.n_nodes
    A = sp.coo_matrix((Ke.ravel(), (np.repeat(sub, 3, axis=1).ravel(), np.tile(sub, (1, 3)).ravel())),
                      shape=(n, n)).tocsr()
    v = np.where(mesh.node_tags == INCLUSION, 1.0, 0.0)
    free = mesh.node_tags == 0
    rhs = -(A[free][:, ~free] @ v[~free])
    v[free] = spla.spsolve(A[free][:, free].tocsc(), rhs)
    return v
