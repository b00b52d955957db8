import json

import numpy as np
import pytest

from reentrant_dg.basis import gauss_legendre, tensor_rule
from reentrant_dg.mesh import (
    BOUNDARY,
    Element,
    MeshError,
    apply_curving_map,
    build_cartesian_mesh,
    face_point_and_normal,
    map_to_physical,
    perturb_vertices,
    plus_side_coordinate,
    refine_uniform,
    swirl_map,
)


def curved_base():
    return apply_curving_map(perturb_vertices(build_cartesian_mesh(4, 4, q=2), 0.1, 0))


def test_single_element_mesh():
    m = build_cartesian_mesh(1, 1, (-1, 1, -1, 1), 1)
    assert m.n_elements == 1 and len(m.faces) == 4
    corners = m.nodes[0].reshape(-1, 2)
    assert {tuple(c) for c in corners} == {(-1, -1), (1, -1), (-1, 1), (1, 1)}


def test_two_by_two_face_count():
    m = build_cartesian_mesh(2, 2, q=1)
    assert m.n_elements == 4 and len(m.faces) == 12
    assert sum(f.is_boundary for f in m.faces) == 8
    for f in m.faces:
        if not f.is_boundary:
            assert f.plus_element != f.minus_element and f.plus_element != BOUNDARY


def test_cubic_geometry_nodes():
    m = build_cartesian_mesh(4, 4, q=3)
    assert m.n_elements == 16 and m.nodes.shape == (16, 4, 4, 2)


def test_degenerate_bbox_rejected():
    with pytest.raises(MeshError):
        build_cartesian_mesh(2, 2, (0, 0, 0, 1))


def test_every_edge_in_exactly_one_face():
    m = curved_base()
    seen = {}
    for f in m.faces:
        for e, k in ((f.minus_element, f.minus_edge), (f.plus_element, f.plus_edge)):
            if e != BOUNDARY:
                seen[(e, k)] = seen.get((e, k), 0) + 1
    assert len(seen) == 4 * m.n_elements and set(seen.values()) == {1}


def test_swirl_map_values():
    assert np.allclose(swirl_map(0.0, 0.0), (0.0, 0.0))
    assert np.allclose(swirl_map(1.0, 0.5), (1.0, 0.5), atol=1e-15)
    th = 1.5 * 0.75 * 0.75
    assert abs(th - 0.84375) < 1e-15
    expect = (np.cos(th) * 0.5 - np.sin(th) * 0.5, np.cos(th) * 0.5 + np.sin(th) * 0.5)
    assert np.allclose(swirl_map(0.5, 0.5), expect, atol=1e-15)


def test_curving_moves_nodes_and_keeps_connectivity():
    base = build_cartesian_mesh(4, 4, q=2)
    curved = apply_curving_map(base)
    assert np.array_equal(base.vertex_ids, curved.vertex_ids)
    X, Y = swirl_map(base.nodes[..., 0], base.nodes[..., 1])
    assert np.allclose(curved.nodes, np.stack([X, Y], -1))


def test_folding_map_rejected_with_element_list():
    with pytest.raises(MeshError, match="element"):
        apply_curving_map(build_cartesian_mesh(2, 2), lambda x, y: (-x, y))
    # the swirl folds the square; fine cubic meshes resolve the fold and are rejected
    with pytest.raises(MeshError):
        apply_curving_map(build_cartesian_mesh(8, 8, q=3))


def test_curved_area_and_positive_elements():
    m = curved_base()
    rule = tensor_rule(gauss_legendre(6))
    _, _, det = m.geometry(rule.points)
    areas = det @ rule.weights
    assert np.all(areas > 0)
    assert abs(areas.sum() - 4.0) < 0.2


def test_refine_counts():
    m = build_cartesian_mesh(1, 1)
    r1 = refine_uniform(m)
    assert r1.n_elements == 4 and len(r1.faces) == 12 and r1.level == 1
    assert refine_uniform(r1).n_elements == 16


def test_refine_straight_children_match_subdivision():
    m = build_cartesian_mesh(1, 1, (0, 2, 0, 1), q=2)
    r = refine_uniform(m)
    xs = np.unique(np.round(r.nodes[..., 0].ravel(), 14))
    ys = np.unique(np.round(r.nodes[..., 1].ravel(), 14))
    assert np.allclose(xs, np.linspace(0, 2, 5), atol=1e-14)
    assert np.allclose(ys, np.linspace(0, 1, 5), atol=1e-14)


def test_refine_halves_h_on_straight_mesh():
    m = build_cartesian_mesh(3, 2, q=2)
    ratio = refine_uniform(m).h_max / m.h_max
    assert 0.45 <= ratio <= 0.55


def test_refined_curved_children_follow_parent_map():
    m = curved_base()
    r = refine_uniform(m)
    rng = np.random.default_rng(0)
    ref = rng.uniform(-1, 1, (10, 2))
    for e in (0, 7, 15):
        for b in range(2):
            for a in range(2):
                child = r.elements[4 * e + 2 * b + a]
                parent_ref = (ref + 1) / 2 + np.array([a, b]) - 1
                for p, pp in zip(ref, parent_ref):
                    xc = map_to_physical(child, p)[0]
                    xp = map_to_physical(m.elements[e], pp)[0]
                    assert np.allclose(xc, xp, atol=1e-13)


def test_map_to_physical_unit_square():
    m = build_cartesian_mesh(1, 1, (0, 1, 0, 1))
    x, J, det = map_to_physical(m.elements[0], (0.0, 0.0))
    assert np.allclose(x, (0.5, 0.5)) and abs(det - 0.25) < 1e-15


def test_identity_lattice_element():
    lat = np.linspace(-1, 1, 3)
    xi, eta = np.meshgrid(lat, lat, indexing="ij")
    elem = Element(0, np.stack([xi, eta], -1), 2)
    for p in np.random.default_rng(2).uniform(-1, 1, (5, 2)):
        x, J, det = map_to_physical(elem, p)
        assert np.allclose(x, p) and np.allclose(J, np.eye(2)) and abs(det - 1) < 1e-14


def test_jacobian_matches_finite_differences():
    elem = curved_base().elements[5]
    h = 1e-6
    for p in np.random.default_rng(3).uniform(-0.9, 0.9, (5, 2)):
        _, J, _ = map_to_physical(elem, p)
        for c in range(2):
            e = np.zeros(2)
            e[c] = h
            fd = (map_to_physical(elem, p + e)[0] - map_to_physical(elem, p - e)[0]) / (2 * h)
            assert np.allclose(J[:, c], fd, rtol=1e-8, atol=1e-8 * np.abs(J).max())


def test_straight_face_normals():
    m = build_cartesian_mesh(1, 1)
    s = np.linspace(-1, 1, 5)
    right = next(f for f in m.faces if f.minus_edge == 1)
    _, n, sj = face_point_and_normal(m, right, s)
    assert np.allclose(n, (1, 0)) and np.allclose(sj, 1)
    m = build_cartesian_mesh(1, 1, (0, 1, 0, 1))
    top = next(f for f in m.faces if f.minus_edge == 2)
    _, n, sj = face_point_and_normal(m, top, s)
    assert np.allclose(n, (0, 1)) and np.allclose(sj, 0.5)


def polyline_length(m, f, n):
    x, _, _ = face_point_and_normal(m, f, np.linspace(-1, 1, n + 1))
    return np.linalg.norm(np.diff(x, axis=0), axis=1).sum()


def test_curved_face_length_vs_polyline():
    # a 10^4-segment polyline carries an O(n^-2) chord bias of ~1e-9 on the
    # coarse swirled faces, so it is Richardson-extrapolated with 2 10^4 segments
    coarse = curved_base()
    for m, npts, rtol in ((coarse, 20, 1e-12), (refine_uniform(coarse), 10, 1e-10)):
        rule = gauss_legendre(npts)
        for f in m.faces[:: max(1, len(m.faces) // 25)]:
            _, _, sj = face_point_and_normal(m, f, rule.points)
            length = rule.weights @ sj
            p1, p2 = polyline_length(m, f, 10_000), polyline_length(m, f, 20_000)
            assert abs(length - p1) < 1e-8 * p1
            assert abs(length - (4 * p2 - p1) / 3) < rtol * length


def test_interior_traces_coincide():
    m = refine_uniform(curved_base())
    s = gauss_legendre(5).points
    for f in m.faces:
        if f.is_boundary:
            continue
        xm, nm, sjm = m.face_geometry_pointwise(f.minus_element, f.minus_edge, s)
        xp, np_, sjp = m.face_geometry_pointwise(f.plus_element, f.plus_edge, plus_side_coordinate(f.flipped, s))
        scale = max(1.0, np.abs(xm).max())
        assert np.abs(xm - xp).max() <= 1e-12 * scale
        assert np.abs(nm + np_).max() <= 1e-12
        assert np.allclose(sjm, sjp, rtol=1e-12)


def test_summary_json():
    info = json.loads(curved_base().summary_json(reentrant=3))
    assert info["elements"] == 16 and info["faces"] == 40 and info["reentrant"] == 3
