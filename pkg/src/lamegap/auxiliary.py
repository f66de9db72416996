"""Rigid displacements and the explicit gap fields v-bar, u-bar_i, u-bar_0.

Gradient matrices follow ``G[..., a, b] = d u_a / d x_b``.  Points are arrays
with trailing axis ``d``; evaluation is vectorized over the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np

from .geometry import GapGeometry


class RigidBasis:
    """Translations e_1..e_d followed by x_k e_j - x_j e_k for j < k."""

    def __init__(self, dim: int):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        mats = []
        for j in range(dim):
            mats.append((np.eye(dim)[j], np.zeros((dim, dim))))
        for j, k in combinations(range(dim), 2):
            A = np.zeros((dim, dim))
            A[j, k] = 1.0
            A[k, j] = -1.0
            mats.append((np.zeros(dim), A))
        # psi_i(x) = b_i + A_i x
        self._affine = mats

    def __len__(self) -> int:
        return self.dim * (self.dim + 1) // 2

    def _check(self, i: int):
        if not 1 <= i <= len(self):
            raise IndexError(f"rigid index must be in 1..{len(self)}, got {i}")

    def value(self, i: int, x) -> np.ndarray:
        self._check(i)
        b, A = self._affine[i - 1]
        x = np.asarray(x, dtype=float)
        return b + x @ A.T

    def grad(self, i: int) -> np.ndarray:
        self._check(i)
        return self._affine[i - 1][1].copy()

    def strain(self, i: int) -> np.ndarray:
        G = self.grad(i)
        return 0.5 * (G + G.T)


@dataclass
class BoundaryField:
    """Closed-form boundary data phi with its full gradient.

    ``value(x)`` returns (..., d) and ``grad(x)`` returns (..., d, d).
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    dim: int = 2
    name: str = "custom"

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def normalized(self) -> "BoundaryField":
        """Shift by a constant so that phi(0) = 0."""
        off = self.value(np.zeros(self.dim))
        if not np.any(off):
            return self
        v, gr = self.value, self.grad
        return BoundaryField(lambda x: v(x) - off, gr, self.dim, self.name)

    @staticmethod
    def rigid(k: int, dim: int = 2) -> "BoundaryField":
        basis = RigidBasis(dim)
        G = basis.grad(k)
        return BoundaryField(
            lambda x: basis.value(k, x),
            lambda x: np.broadcast_to(G, np.shape(x)[:-1] + (dim, dim)).copy(),
            dim,
            f"rigid{k}",
        )

    @staticmethod
    def zero(dim: int = 2) -> "BoundaryField":
        return BoundaryField(
            lambda x: np.zeros(np.shape(x)),
            lambda x: np.zeros(np.shape(x)[:-1] + (dim, dim)),
            dim,
            "zero",
        )

    @staticmethod
    def linear(G, dim: int = 2, name: str = "linear") -> "BoundaryField":
        G = np.asarray(G, dtype=float)
        return BoundaryField(
            lambda x: np.asarray(x) @ G.T,
            lambda x: np.broadcast_to(G, np.shape(x)[:-1] + (dim, dim)).copy(),
            dim,
            name,
        )


def _split(g: GapGeometry, x, tol: float):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.dim:
        raise ValueError(f"points must have trailing axis {g.dim}")
    xp, xd = x[..., :-1], x[..., -1]
    if np.any(np.sqrt(np.sum(xp * xp, axis=-1)) > g.window * (1 + 1e-12)):
        raise ValueError("point outside the gap window")
    prof = g.profile
    h = prof.h_lower(xp)
    delta = g.epsilon + prof.h_upper(xp) - h
    slack = tol * delta
    if np.any(xd < h - slack) or np.any(xd > h + delta + slack):
        raise ValueError("point outside the closed gap h <= x_d <= eps + h1")
    return x, xp, xd, h, delta


def vbar(g: GapGeometry, x, tol: float = 1e-9):
    """(x_d - h(x'))/delta(x') and its gradient."""
    x, xp, xd, h, delta = _split(g, x, tol)
    prof = g.profile
    gh = prof.grad_lower(xp)
    gdelta = prof.grad_upper(xp) - gh
    v = (xd - h) / delta
    grad = np.empty(x.shape)
    grad[..., :-1] = -(gh + v[..., None] * gdelta) / delta[..., None]
    grad[..., -1] = 1.0 / delta
    return v, grad


def ubar(g: GapGeometry, i: int, x, tol: float = 1e-9):
    """psi_i v-bar and its gradient psi_i (x) grad v-bar + v-bar grad psi_i."""
    basis = RigidBasis(g.dim)
    basis._check(i)
    v, gv = vbar(g, x, tol)
    psi = basis.value(i, x)
    val = psi * v[..., None]
    grad = psi[..., :, None] * gv[..., None, :] + v[..., None, None] * basis.grad(i)
    return val, grad


def lower_trace(g: GapGeometry, phi: BoundaryField, xp):
    """phi(x', h(x')) and its tangential gradient (shape (..., d, d-1))."""
    xp = np.asarray(xp, dtype=float)
    prof = g.profile
    h = prof.h_lower(xp)
    pts = np.concatenate([xp, h[..., None]], axis=-1)
    val = phi.value(pts)
    G = phi.grad(pts)
    gh = prof.grad_lower(xp)
    tang = G[..., :, :-1] + G[..., :, -1:] * gh[..., None, :]
    return val, tang


def ubar0(g: GapGeometry, phi: BoundaryField, x, tol: float = 1e-9):
    """phi(x', h(x'))(1 - v-bar) and its gradient."""
    x = np.asarray(x, dtype=float)
    v, gv = vbar(g, x, tol)
    val_t, tang = lower_trace(g, phi, x[..., :-1])
    w = 1.0 - v
    val = val_t * w[..., None]
    grad = -val_t[..., :, None] * gv[..., None, :]
    grad[..., :, :-1] += tang * w[..., None, None]
    return val, grad


@dataclass
class AuxiliaryField:
    """One of the explicit fields u-bar_i (index >= 1) or u-bar_0 (index 0)."""

    index: int
    geometry: GapGeometry
    phi: BoundaryField | None = None

    def __post_init__(self):
        n = self.geometry.dim * (self.geometry.dim + 1) // 2
        if not 0 <= self.index <= n:
            raise IndexError(f"index must be in 0..{n}")
        if self.index == 0 and self.phi is None:
            raise ValueError("u-bar_0 needs boundary data phi")

    def evaluate(self, x):
        if self.index == 0:
            return ubar0(self.geometry, self.phi, x)
        return ubar(self.geometry, self.index, x)

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x)[1]
