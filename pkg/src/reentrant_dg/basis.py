"""Gauss quadrature rules and nodal tensor-product Lagrange bases on [-1, 1]^2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Points and positive weights on the reference interval or square.

    ``points`` has shape (n,) for 1D rules and (n, 2) for 2D rules.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def dim(self) -> int:
        return 1 if self.points.ndim == 1 else self.points.shape[1]

    def __len__(self) -> int:
        return len(self.weights)


def _legendre_and_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p_prev = np.ones_like(x)
    if n == 0:
        return p_prev, np.zeros_like(x)
    p = x.copy()
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1, 1], exact to degree 2n - 1.

    Nodes are Newton-refined roots of P_n starting from the Chebyshev guess.
    """
    if n < 1:
        raise ValueError(f"Gauss-Legendre rule needs at least one point, got n={n}")
    if n == 1:
        return QuadratureRule(np.zeros(1), np.full(1, 2.0), 1)

    k = np.arange(n)
    x = -np.cos(np.pi * (k + 0.75) / (n + 0.5))
    for _ in range(100):
        p, dp = _legendre_and_derivative(n, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-15:
            break
    p, dp = _legendre_and_derivative(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    # symmetrize to kill the last ulp of asymmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(x, w, 2 * n - 1)


def gauss_lobatto_points(n: int) -> np.ndarray:
    """The n Gauss-Lobatto-Legendre points on [-1, 1] (n >= 2)."""
    if n < 2:
        raise ValueError("Gauss-Lobatto lattice needs at least two points")
    if n == 2:
        return np.array([-1.0, 1.0])
    interior = np.polynomial.legendre.Legendre.basis(n - 1).deriv().roots()
    interior = np.sort(interior.real)
    pts = np.concatenate([[-1.0], interior, [1.0]])
    return 0.5 * (pts - pts[::-1])


def tensor_rule(rule1d: QuadratureRule) -> QuadratureRule:
    """Tensor product of a 1D rule with itself; point k = i * n + j is (x_i, x_j)."""
    x = rule1d.points
    xi, eta = np.meshgrid(x, x, indexing="ij")
    w = np.outer(rule1d.weights, rule1d.weights).ravel()
    pts = np.column_stack([xi.ravel(), eta.ravel()])
    return QuadratureRule(pts, w, rule1d.exactness_degree)


def lagrange_1d(nodes: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the Lagrange polynomials on ``nodes`` at ``x``.

    Returns two arrays of shape (len(x), len(nodes)).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    diff = x[:, None] - nodes[None, :]
    denom = np.array([np.prod([nodes[i] - nodes[m] for m in range(n) if m != i]) for i in range(n)])

    vals = np.empty((len(x), n))
    ders = np.zeros((len(x), n))
    for i in range(n):
        others = [m for m in range(n) if m != i]
        vals[:, i] = np.prod(diff[:, others], axis=1) / denom[i] if others else 1.0
        for k in others:
            rest = [m for m in others if m != k]
            ders[:, i] += np.prod(diff[:, rest], axis=1) if rest else 1.0
        ders[:, i] /= denom[i]
    return vals, ders


class BasisSet:
    """Nodal tensor Lagrange basis of degree p on the Gauss-Lobatto lattice.

    Local index k = i * (p + 1) + j, where i counts along xi and j along eta.
    For p = 0 the single node sits at the element center.
    """

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("polynomial degree must be nonnegative")
        self.degree = degree
        self.nodes_1d = np.zeros(1) if degree == 0 else gauss_lobatto_points(degree + 1)
        self.dim = (degree + 1) ** 2

    @property
    def nodes(self) -> np.ndarray:
        xi, eta = np.meshgrid(self.nodes_1d, self.nodes_1d, indexing="ij")
        return np.column_stack([xi.ravel(), eta.ravel()])

    def _tables(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        vx, dx = lagrange_1d(self.nodes_1d, pts[:, 0])
        vy, dy = lagrange_1d(self.nodes_1d, pts[:, 1])
        return vx, dx, vy, dy

    def eval(self, pts) -> np.ndarray:
        """Basis values, shape (npts, dim)."""
        vx, _, vy, _ = self._tables(pts)
        return (vx[:, :, None] * vy[:, None, :]).reshape(len(vx), -1)

    def eval_grad(self, pts) -> np.ndarray:
        """Reference gradients, shape (npts, dim, 2)."""
        vx, dx, vy, dy = self._tables(pts)
        gx = (dx[:, :, None] * vy[:, None, :]).reshape(len(vx), -1)
        gy = (vx[:, :, None] * dy[:, None, :]).reshape(len(vx), -1)
        return np.stack([gx, gy], axis=-1)


def eval_basis(basis: BasisSet, pts) -> np.ndarray:
    return basis.eval(pts)


def eval_basis_grad(basis: BasisSet, pts) -> np.ndarray:
    return basis.eval_grad(pts)
