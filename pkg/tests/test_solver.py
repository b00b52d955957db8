import numpy as np
import pytest
import scipy.sparse as sp

from reentrant_dg import problems
from reentrant_dg.dg import DGSpace, StabilizationSpec, assemble_system
from reentrant_dg.mesh import build_cartesian_mesh
from reentrant_dg.solver import (
    BlockJacobiPreconditioner,
    IdentityPreconditioner,
    SolverConfig,
    as_csr,
    extract_diagonal_blocks,
    gmres_restarted,
    solve,
    spmv,
)


def test_spmv_identity_and_hand_case(rng):
    x = rng.normal(size=6)
    assert np.array_equal(spmv(as_csr(sp.identity(6)), x), x)
    A = as_csr(np.array([[2.0, 0.0], [1.0, 3.0]]))
    assert np.allclose(spmv(A, np.ones(2)), (2, 4))


def test_spmv_vs_dense(rng):
    dense = rng.normal(size=(50, 50)) * (rng.uniform(size=(50, 50)) < 0.1)
    x = rng.normal(size=50)
    assert np.abs(spmv(as_csr(dense), x) - dense @ x).max() < 1e-13


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(as_csr(np.eye(3)), np.ones(4))
    with pytest.raises(ValueError):
        as_csr(np.ones((2, 3)))


def test_csr_layout_canonical(rng):
    rows = rng.integers(0, 20, 200)
    cols = rng.integers(0, 20, 200)
    A = as_csr(sp.coo_matrix((rng.normal(size=200), (rows, cols)), shape=(20, 20)))
    assert np.all(np.diff(A.indptr) >= 0)
    for r in range(20):
        assert np.all(np.diff(A.indices[A.indptr[r]:A.indptr[r + 1]]) > 0)


def test_gmres_identity(rng):
    b = rng.normal(size=12)
    res = gmres_restarted(as_csr(sp.identity(12)), b)
    assert res.converged and res.iterations == 1 and np.allclose(res.x, b)


def test_gmres_diagonal_within_n_iterations():
    A = as_csr(sp.diags(np.arange(1.0, 11.0)))
    b = np.ones(10)
    res = gmres_restarted(A, b, tol=1e-12)
    assert res.converged and res.iterations <= 10
    assert np.allclose(res.x, 1 / np.arange(1.0, 11.0), atol=1e-11)


def test_gmres_zero_rhs():
    res = gmres_restarted(as_csr(np.eye(3)), np.zeros(3))
    assert res.converged and not res.x.any()


def test_gmres_reports_failure(rng):
    A = as_csr(sp.diags(np.linspace(1, 1e4, 400)) + sp.random(400, 400, 0.01, random_state=1))
    res = gmres_restarted(A, rng.normal(size=400), tol=1e-14, restart=5, maxiter=10)
    assert not res.converged and res.iterations == 10


def advection_operator(p=2, n=8):
    space = DGSpace(build_cartesian_mesh(n, n, q=1), p)
    op = assemble_system(space, problems.velocity, problems.reaction, StabilizationSpec(),
                         problems.source, problems.exact_solution)
    return space, op


@pytest.mark.parametrize("kind", ["ilu", "block_jacobi"])
def test_advection_solve_residual_recomputed(kind):
    space, op = advection_operator()
    res = solve(op.matrix, op.rhs, space.block_size, SolverConfig(tol=1e-11, preconditioner=kind))
    assert res.converged
    true = np.linalg.norm(op.rhs - op.matrix @ res.x) / np.linalg.norm(op.rhs)
    assert true <= 1e-11
    assert abs(true - res.residual) <= 1e-12 * max(true, 1e-300) or true == res.residual


def test_block_jacobi_inverts_own_blocks():
    space, op = advection_operator(p=3, n=4)
    M = BlockJacobiPreconditioner(op.matrix, space.block_size)
    blocks = extract_diagonal_blocks(op.matrix, space.block_size)
    prod = np.einsum("bij,bjk->bik", M.inverse, blocks)
    assert np.abs(prod - np.eye(space.block_size)).max() < 1e-10
    dense = op.matrix.toarray()
    nb = space.block_size
    assert np.allclose(blocks[3], dense[3 * nb:4 * nb, 3 * nb:4 * nb])


def test_preconditioned_and_plain_agree():
    space, op = advection_operator(p=1, n=4)
    tol = 1e-12
    xs = [
        gmres_restarted(op.matrix, op.rhs, M, tol=tol, restart=200).x
        for M in (IdentityPreconditioner(), BlockJacobiPreconditioner(op.matrix, space.block_size))
    ]
    exact = np.linalg.solve(op.matrix.toarray(), op.rhs)
    scale = np.abs(exact).max()
    assert np.abs(xs[0] - xs[1]).max() <= 10 * tol * scale
    assert np.abs(xs[1] - exact).max() <= 1e-8 * scale


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="amg")
