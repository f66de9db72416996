"""Monolithic solve of the rigid-inclusion problem with Lagrange multipliers.

Unknowns are all non-outer nodal displacements ``u``, the rigid coefficients
``C`` and one multiplier pair per inclusion node.  The saddle-point system

    [ K_uu   0    S^T ] [u]     [f]
    [ 0      0   -P^T ] [C]  =  [0]
    [ S     -P    0   ] [l]     [0]

ties the inclusion trace to span{psi_i} (third row) and makes the reaction
forces carry no net force or moment (second row).  It shares no code path
with the sub-problem decomposition and serves as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..auxiliary import BoundaryField, RigidBasis
from .elasticity import FieldSolution, assemble_stiffness
from .element import ElasticityTensor
from .mesh import INCLUSION, OUTER, GapMesh


@dataclass
class ConstrainedSolution:
    field: FieldSolution
    C: np.ndarray
    multipliers: np.ndarray
    residual: float


def solve_constrained(mesh: GapMesh, tensor: ElasticityTensor, phi: BoundaryField,
                      K: sp.spmatrix | None = None) -> ConstrainedSolution:
    K = assemble_stiffness(mesh, tensor) if K is None else K
    n = mesh.n_nodes
    out_nodes = np.flatnonzero(mesh.node_tags == OUTER)
    inc_nodes = np.flatnonzero(mesh.node_tags == INCLUSION)
    is_out = np.zeros(2 * n, dtype=bool)
    is_out[2 * out_nodes] = is_out[2 * out_nodes + 1] = True
    udofs = np.flatnonzero(~is_out)
    odofs = np.flatnonzero(is_out)

    g = np.zeros((n, 2))
    g[out_nodes] = phi.value(mesh.nodes[out_nodes])
    g = g.reshape(-1)
    Kc = K.tocsr()
    Kuu = Kc[udofs][:, udofs]
    f = -(Kc[udofs][:, odofs] @ g[odofs])

    # S picks inclusion dofs out of u; P evaluates the rigid basis there
    pos = np.full(2 * n, -1)
    pos[udofs] = np.arange(len(udofs))
    inc_dofs = np.stack([2 * inc_nodes, 2 * inc_nodes + 1], axis=1).ravel()
    m = len(inc_dofs)
    S = sp.csr_matrix((np.ones(m), (np.arange(m), pos[inc_dofs])), shape=(m, len(udofs)))
    basis = RigidBasis(2)
    P = np.stack([basis.value(i, mesh.nodes[inc_nodes]).ravel() for i in range(1, 4)], axis=1)
    P = sp.csr_matrix(P)

    Z3 = sp.csr_matrix((3, 3))
    A = sp.bmat([[Kuu, None, S.T], [None, Z3, -P.T], [S, -P, None]], format="csc")
    rhs = np.concatenate([f, np.zeros(3), np.zeros(m)])
    sol = spla.spsolve(A, rhs)
    res = float(np.linalg.norm(A @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300))

    u = g.copy()
    u[udofs] = sol[: len(udofs)]
    C = sol[len(udofs): len(udofs) + 3]
    lam = sol[len(udofs) + 3:]
    field = FieldSolution(mesh, tensor, -1, u.reshape(-1, 2), res)
    return ConstrainedSolution(field, C, lam, res)
