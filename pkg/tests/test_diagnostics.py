import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reentrant_dg import problems
from reentrant_dg.basis import gauss_legendre
from reentrant_dg.dg import DGSpace, StabilizationSpec, detect_reentrant_faces, rotating_velocity
from reentrant_dg.diagnostics import (
    CSV_HEADER,
    ConvergenceTable,
    ErrorRecord,
    OracleError,
    convergence_rates,
    dg_norm,
    dg_norm_error,
    find_roots,
    integrate_face_adaptive,
    jump_seminorm_sq,
    l2_error,
    l2_norm,
    l2_project,
    reentrant_quadrature_error,
)
from reentrant_dg.mesh import build_cartesian_mesh, refine_uniform

UPWIND = StabilizationSpec()


def poly_fn(c):
    return lambda x: np.polynomial.polynomial.polyval2d(x[..., 0], x[..., 1], c)


# ---------------------------------------------------------------- projection and norms


@pytest.mark.parametrize("p", [1, 2, 3])
def test_projection_reproduces_polynomials(p, rng):
    space = DGSpace(build_cartesian_mesh(3, 2, (0, 3, -1, 1)), p)
    u = poly_fn(rng.normal(size=(p + 1, p + 1)))
    coeffs = l2_project(space, u)
    assert l2_error(space, coeffs, u) < 1e-12


def test_projection_of_constant_is_nodal_constant(curved_mesh):
    space = DGSpace(curved_mesh, 3)
    assert np.allclose(l2_project(space, lambda x: np.full(x.shape[:-1], 3.0)), 3.0, atol=1e-12)


def test_projection_orthogonality(curved_mesh):
    space = DGSpace(curved_mesh, 2)
    coeffs = l2_project(space, problems.exact_solution)
    vd = space.volume_data()
    resid = problems.exact_solution(vd.x) - space.evaluate(coeffs)
    moments = np.einsum("eq,eq,qi->ei", vd.wdet, resid, vd.phi)
    assert np.abs(moments).max() < 1e-12


def test_l2_error_examples():
    space = DGSpace(build_cartesian_mesh(1, 1), 1)
    zero = np.zeros(space.ndofs)
    # int int x^2 over [-1, 1]^2 = 4/3
    assert l2_error(space, zero, lambda x: x[..., 0]) == pytest.approx(2 / math.sqrt(3), abs=1e-14)
    coeffs = l2_project(space, lambda x: x[..., 0] + 2 * x[..., 1])
    assert l2_error(space, coeffs, lambda x: x[..., 0] + 2 * x[..., 1]) < 1e-14


@pytest.mark.parametrize("p", [1, 2])
def test_projection_error_rate(p, curved_mesh):
    errs = []
    mesh = curved_mesh
    for _ in range(4):
        space = DGSpace(mesh, p)
        errs.append(l2_error(space, l2_project(space, problems.exact_solution), problems.exact_solution))
        mesh = refine_uniform(mesh)
    assert convergence_rates(errs)[-1] >= p + 1 - 0.2


def test_dg_error_zero_for_continuous_member():
    space = DGSpace(build_cartesian_mesh(3, 3), 1)
    u = lambda x: 1 + x[..., 0] - 0.5 * x[..., 1]
    coeffs = l2_project(space, u)
    assert dg_norm_error(space, coeffs, u, problems.velocity, UPWIND) < 1e-13


def test_mean_value_dg_error_equals_l2(curved_mesh):
    space = DGSpace(curved_mesh, 2)
    coeffs = np.random.default_rng(0).normal(size=space.ndofs)
    e_dg = dg_norm_error(space, coeffs, problems.exact_solution, problems.velocity, StabilizationSpec("mean_value"))
    assert e_dg == pytest.approx(l2_error(space, coeffs, problems.exact_solution), rel=1e-14)


def test_single_face_jump_contributes_half_length():
    mesh = build_cartesian_mesh(2, 1, (-2, 2, -1, 1))
    space = DGSpace(mesh, 1)
    v = np.zeros(space.ndofs)
    v[: space.block_size] = 1.0  # v = 1 on element 0, 0 on element 1
    fd = space.face_data()
    b0 = np.zeros(fd.wsj.shape)
    face = next(f for f in mesh.faces if not f.is_boundary)
    b0[face.id] = 0.5
    assert jump_seminorm_sq(space, v, b0) == pytest.approx(0.5 * 2.0, abs=1e-14)


def test_dg_norm_dominates_l2(curved_mesh, rng):
    space = DGSpace(curved_mesh, 2)
    for _ in range(5):
        v = rng.normal(size=space.ndofs)
        assert dg_norm(space, v, problems.velocity, UPWIND) >= l2_norm(space, v)
        assert dg_norm_error(space, v, problems.exact_solution, problems.velocity, UPWIND) >= l2_error(
            space, v, problems.exact_solution, space.volume_rule()
        )


# ---------------------------------------------------------------- adaptive oracle


def test_oracle_abs():
    assert integrate_face_adaptive(lambda s: np.abs(s), lambda s: s) == pytest.approx(1.0, abs=1e-14)
    assert integrate_face_adaptive(lambda s: np.abs(s) * s**2, lambda s: s) == pytest.approx(0.5, abs=1e-14)


def test_oracle_off_center_root():
    root = 0.3141
    val = integrate_face_adaptive(lambda s: np.abs(s - root) * np.cos(s), lambda s: s - root)
    # closed form of int |s - r| cos s over [-1, 1]
    F = lambda a, b: (np.sin(b) * (b - root) + np.cos(b)) - (np.sin(a) * (a - root) + np.cos(a))
    exact = -F(-1, root) + F(root, 1)
    assert val == pytest.approx(exact, abs=1e-13)


def test_oracle_smooth_matches_single_gauss():
    r = gauss_legendre(20)
    f = lambda s: np.exp(s) * np.sin(3 * s)
    assert integrate_face_adaptive(f) == pytest.approx(r.weights @ f(r.points), abs=1e-13)


def test_oracle_rejects_pathological_field():
    with pytest.raises(OracleError):
        integrate_face_adaptive(np.abs, lambda s: np.sin(40 * s), probe_count=400)


def test_find_roots():
    roots = find_roots(lambda s: (s - 0.2) * (s + 0.7))
    assert np.allclose(roots, [-0.7, 0.2], atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(0.1, 3.0))
def test_oracle_idempotent_under_split(root, k):
    f = lambda s: np.abs(s - root) * np.exp(k * s)
    a = integrate_face_adaptive(f, lambda s: s - root)
    half = integrate_face_adaptive(lambda s: f(s) * (s < root), lambda s: s - root) + integrate_face_adaptive(
        lambda s: f(s) * (s >= root), lambda s: s - root
    )
    assert a == pytest.approx(half, abs=1e-12)


# ---------------------------------------------------------------- Q metric


def test_q_closed_form_abs_face():
    mesh = build_cartesian_mesh(2, 1, (-2, 2, -1, 1), q=1)
    space = DGSpace(mesh, 0)
    face = next(f for f in mesh.faces if not f.is_boundary)
    q = reentrant_quadrature_error(space, rotating_velocity(), UPWIND, space.face_rule(2))
    # |beta . n| = |y| on x = 0: exact int |y|/2 = 1/2; 2-point Gauss gives 2 (1/sqrt3)/2
    assert q.per_face[face.id] == pytest.approx(1 / math.sqrt(3) - 0.5, abs=1e-12)


def test_q_zero_on_non_reentrant_faces(curved_mesh):
    space = DGSpace(curved_mesh, 3)
    q = reentrant_quadrature_error(space, problems.velocity, UPWIND)
    classes = detect_reentrant_faces(curved_mesh, problems.velocity)
    flags = np.array([c.reentrant for c in classes])
    assert np.all(q.per_face[~flags] <= 1e-13)
    assert np.all(q.per_face[flags] > 1e-10)
    assert q.total == pytest.approx(q.per_face.sum(), rel=1e-15)


# ---------------------------------------------------------------- rates and tables


def test_rate_examples():
    assert convergence_rates([1e-2, 2.5e-3]) == [pytest.approx(2.0)]
    assert round(convergence_rates([8.88e-3, 7.47e-4])[0], 2) == 3.57
    assert round(convergence_rates([4.60e-2, 5.63e-3])[0], 2) == 3.03
    assert convergence_rates([1.0, 0.0, 0.5]) == [None, None]


def test_csv_format():
    t = ConvergenceTable()
    t.append(ErrorRecord(0, 1.0, 16, 3, 1e-3, 2e-2, 4e-2))
    t.append(ErrorRecord(1, 0.5, 64, 7, 5e-4, 1.25e-3, 5e-3))
    lines = t.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_HEADER) == "level,h,dofs,reentrant,Q,Q_rate,l2,l2_rate,dg,dg_rate"
    assert lines[1] == "0,1.00000e+00,16,3,1.00000e-03,,2.00000e-02,,4.00000e-02,"
    assert lines[2].split(",")[5] == "1.00000e+00" and lines[2].split(",")[7] == "4.00000e+00"
    assert t.to_csv(precision=3).splitlines()[1].split(",")[1] == "1.00e+00"
