"""Six-node triangle: shape functions, 7-point rule, plane-strain material."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

# reference nodes: v0, v1, v2, m01, m12, m20
REF_NODES = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float)


def _dunavant7():
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    pts = [(1 / 3, 1 / 3)]
    wts = [0.225]
    for a, b, w in ((a1, b1, 0.132394152788506), (a2, b2, 0.125939180544827)):
        # barycentric (a, b, b) and permutations -> (xi, eta) = (L1, L2)
        for l0, l1, l2 in ((a, b, b), (b, a, b), (b, b, a)):
            pts.append((l1, l2))
            wts.append(w)
    return np.array(pts), 0.5 * np.array(wts)


QUAD_POINTS, QUAD_WEIGHTS = _dunavant7()


def shape_values(xi: np.ndarray) -> np.ndarray:
    """N_a at reference points, shape (..., 6)."""
    xi = np.asarray(xi, dtype=float)
    L1, L2 = xi[..., 0], xi[..., 1]
    L0 = 1.0 - L1 - L2
    return np.stack(
        [L0 * (2 * L0 - 1), L1 * (2 * L1 - 1), L2 * (2 * L2 - 1), 4 * L0 * L1, 4 * L1 * L2, 4 * L2 * L0],
        axis=-1,
    )


def shape_grads(xi: np.ndarray) -> np.ndarray:
    """dN_a/d(xi, eta), shape (..., 6, 2)."""
    xi = np.asarray(xi, dtype=float)
    L1, L2 = xi[..., 0], xi[..., 1]
    L0 = 1.0 - L1 - L2
    z = np.zeros_like(L1)
    dxi = [-(4 * L0 - 1), 4 * L1 - 1, z, 4 * (L0 - L1), 4 * L2, -4 * L2]
    deta = [-(4 * L0 - 1), z, 4 * L2 - 1, -4 * L1, 4 * L1, 4 * (L0 - L2)]
    return np.stack([np.stack(dxi, axis=-1), np.stack(deta, axis=-1)], axis=-1)


# local edges: (start vertex, end vertex, midside) in element-local indices
EDGES = ((0, 1, 3), (1, 2, 4), (2, 0, 5))


def edge_reference(edge: int, t: np.ndarray) -> np.ndarray:
    """Reference coordinates along a local edge, t in [0, 1]."""
    a, b, _ = EDGES[edge]
    t = np.asarray(t, dtype=float)[..., None]
    return (1 - t) * REF_NODES[a] + t * REF_NODES[b]


@dataclass(frozen=True)
class ElasticityTensor:
    """Isotropic tensor C_ijkl = lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk)."""

    lam: float
    mu: float
    dim: int = 2

    def __post_init__(self):
        if self.mu <= 0 or self.dim * self.lam + 2 * self.mu <= 0:
            raise ValueError("Lame pair must satisfy mu > 0 and d*lam + 2*mu > 0")

    def full(self) -> np.ndarray:
        d = self.dim
        I = np.eye(d)
        return (self.lam * np.einsum("ij,kl->ijkl", I, I)
                + self.mu * (np.einsum("ik,jl->ijkl", I, I) + np.einsum("il,jk->ijkl", I, I)))

    def voigt(self) -> np.ndarray:
        """Plane-strain matrix acting on (e11, e22, 2 e12)."""
        if self.dim != 2:
            raise ValueError("Voigt form implemented for d = 2")
        l, m = self.lam, self.mu
        return np.array([[l + 2 * m, l, 0.0], [l, l + 2 * m, 0.0], [0.0, 0.0, m]])

    def stress(self, grad: np.ndarray) -> np.ndarray:
        """sigma = lam tr(e) I + 2 mu e for gradient matrices (..., d, d)."""
        e = 0.5 * (grad + np.swapaxes(grad, -1, -2))
        tr = np.trace(e, axis1=-2, axis2=-1)
        return self.lam * tr[..., None, None] * np.eye(self.dim) + 2 * self.mu * e

    def contract(self, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
        """(C e(g1), e(g2))."""
        e2 = 0.5 * (g2 + np.swapaxes(g2, -1, -2))
        return np.einsum("...ij,...ij->...", self.stress(g1), e2)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        C = self.full()
        d = self.dim
        for i, j, k, l in product(range(d), repeat=4):
            c = C[i, j, k, l]
            if abs(c - C[k, l, i, j]) > tol or abs(c - C[k, l, j, i]) > tol:
                return False
        return True

    def ellipticity_bounds(self) -> tuple[float, float]:
        a, b = 2 * self.mu, self.dim * self.lam + 2 * self.mu
        return min(a, b), max(a, b)
