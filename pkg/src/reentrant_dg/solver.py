"""Restarted GMRES with block-Jacobi or incomplete-LU preconditioning.

Matrices are stored as ``scipy.sparse.csr_matrix`` with sorted, unique
column indices; everything above the matrix-vector product lives here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)


def as_csr(A) -> sp.csr_matrix:
    """Square CSR matrix with canonical (sorted, duplicate-free) indices."""
    mat = sp.csr_matrix(A, dtype=float)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"matrix must be square, got shape {mat.shape}")
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return A @ x


class IdentityPreconditioner:
    def apply(self, r: np.ndarray) -> np.ndarray:
        return r


class BlockJacobiPreconditioner:
    """Inverse of the block diagonal of ``A`` with square blocks of ``block_size``.

    Blocks are inverted by LAPACK LU with partial pivoting (batched solve
    against the identity).
    """

    def __init__(self, A: sp.csr_matrix, block_size: int):
        n = A.shape[0]
        if n % block_size:
            raise ValueError("matrix size is not a multiple of the block size")
        self.block_size = block_size
        self.n_blocks = n // block_size
        self.blocks = extract_diagonal_blocks(A, block_size)
        eye = np.broadcast_to(np.eye(block_size), self.blocks.shape)
        self.inverse = np.linalg.solve(self.blocks, eye)

    def apply(self, r: np.ndarray) -> np.ndarray:
        nb = self.block_size
        return np.einsum("bij,bj->bi", self.inverse, r.reshape(-1, nb)).ravel()


class ILUPreconditioner:
    """Incomplete LU (SuperLU ``spilu``) of the full matrix.

    Element block-Jacobi needs thousands of iterations once characteristics
    close on themselves (rotating velocity); ILU carries the coupling
    between elements and keeps GMRES at a handful of iterations.
    """

    def __init__(self, A: sp.csr_matrix, drop_tol: float = 1e-5, fill_factor: float = 20.0):
        self.factor = spla.spilu(sp.csc_matrix(A), drop_tol=drop_tol, fill_factor=fill_factor)

    def apply(self, r: np.ndarray) -> np.ndarray:
        return self.factor.solve(r)


def extract_diagonal_blocks(A: sp.csr_matrix, block_size: int) -> np.ndarray:
    coo = A.tocoo()
    nb = block_size
    keep = (coo.row // nb) == (coo.col // nb)
    blocks = np.zeros((A.shape[0] // nb, nb, nb))
    np.add.at(blocks, (coo.row[keep] // nb, coo.row[keep] % nb, coo.col[keep] % nb), coo.data[keep])
    return blocks


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-11
    restart: int = 60
    maxiter: int = 5000
    preconditioner: str = "ilu"  # "ilu", "block_jacobi" or "none"

    def __post_init__(self):
        if self.preconditioner not in ("ilu", "block_jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


def make_preconditioner(A: sp.csr_matrix, block_size: int, kind: str = "ilu"):
    if kind == "ilu":
        return ILUPreconditioner(A)
    if kind == "block_jacobi":
        return BlockJacobiPreconditioner(A, block_size)
    if kind == "none":
        return IdentityPreconditioner()
    raise ValueError(f"unknown preconditioner {kind!r}")


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float  # ||b - A x|| / ||b||, recomputed at exit
    converged: bool
    breakdown: bool = False


def gmres_restarted(
    A: sp.csr_matrix,
    b: np.ndarray,
    M=None,
    tol: float = 1e-11,
    restart: int = 60,
    maxiter: int = 5000,
    x0: Optional[np.ndarray] = None,
) -> SolveResult:
    """Right-preconditioned GMRES(restart).

    Convergence is declared only when the recomputed true residual
    ``||b - A x|| / ||b||`` is at most ``tol``; ``maxiter`` counts inner
    (Arnoldi) iterations across restarts.
    """
    M = M or IdentityPreconditioner()
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        return SolveResult(np.zeros(n), 0, 0.0, True)

    total = 0
    r = b - spmv(A, x)
    beta = np.linalg.norm(r)
    breakdown = False
    while beta / bnorm > tol and total < maxiter:
        m = min(restart, maxiter - total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k_used = 0
        for k in range(m):
            Z[k] = M.apply(V[k])
            w = spmv(A, Z[k])
            # modified Gram-Schmidt, two passes for stability
            for _ in range(2):
                for i in range(k + 1):
                    h = V[i] @ w
                    H[i, k] += h
                    w -= h * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            k_used = k + 1
            total += 1
            if denom == 0.0:
                breakdown = True
                k_used = k
                break
            cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            hk1 = H[k + 1, k]
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            if abs(g[k + 1]) / bnorm <= 0.1 * tol or hk1 == 0.0:
                break
            V[k + 1] = w / hk1
        if k_used:
            y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
            x = x + y @ Z[:k_used]
        r = b - spmv(A, x)
        beta = np.linalg.norm(r)
        if breakdown:
            break

    rel = beta / bnorm
    if rel > tol:
        logger.warning("GMRES stopped at relative residual %.3e after %d iterations", rel, total)
    return SolveResult(x, total, rel, rel <= tol, breakdown)


def solve(A: sp.csr_matrix, b: np.ndarray, block_size: int, config: SolverConfig = SolverConfig(), M=None, x0=None):
    """GMRES solve with the preconditioner named in ``config`` (or a prebuilt ``M``)."""
    if M is None:
        M = make_preconditioner(A, block_size, config.preconditioner)
    return gmres_restarted(A, b, M, tol=config.tol, restart=config.restart, maxiter=config.maxiter, x0=x0)
