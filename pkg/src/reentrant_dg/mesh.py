"""Curved quadrilateral meshes with isoparametric geometry maps.

Every element carries a (q+1) x (q+1) lattice of equispaced geometry nodes;
its map from the reference square [-1, 1]^2 is the tensor Lagrange
interpolant through those nodes.

Reference edge numbering (with the face coordinate s running along it):

    0: eta = -1, s = xi       1: xi = +1, s = eta
    2: eta = +1, s = xi       3: xi = -1, s = eta
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .basis import gauss_legendre, lagrange_1d, tensor_rule

BOUNDARY = -1

# corner ids of each reference edge, listed in the direction of increasing s
EDGE_CORNERS = ((0, 1), (1, 2), (3, 2), (0, 3))
EDGE_REF_NORMALS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])


class MeshError(ValueError):
    pass


def edge_reference_points(edge, s) -> np.ndarray:
    """Reference-square coordinates of face coordinate(s) ``s`` on ``edge``.

    ``edge`` and ``s`` broadcast against each other; result has a trailing
    axis of length 2.
    """
    edge, s = np.broadcast_arrays(np.asarray(edge), np.asarray(s, dtype=float))
    fixed = np.where((edge == 0) | (edge == 3), -1.0, 1.0)
    along_xi = (edge == 0) | (edge == 2)
    xi = np.where(along_xi, s, fixed)
    eta = np.where(along_xi, fixed, s)
    return np.stack([xi, eta], axis=-1)


@dataclass(frozen=True)
class Element:
    id: int
    geometry_nodes: np.ndarray
    geometry_degree: int


@dataclass(frozen=True)
class Face:
    id: int
    minus_element: int
    minus_edge: int
    plus_element: int
    plus_edge: int
    flipped: bool

    @property
    def is_boundary(self) -> bool:
        return self.plus_element == BOUNDARY


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray  # (n_elements, q+1, q+1, 2), axis 1 along xi
    vertex_ids: np.ndarray  # (n_elements, 4), counter-clockwise from (-1, -1)
    bbox: tuple[float, float, float, float]
    level: int = 0
    faces: tuple[Face, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "faces", _build_faces(self.vertex_ids))

    @property
    def geometry_degree(self) -> int:
        return self.nodes.shape[1] - 1

    @property
    def n_elements(self) -> int:
        return self.nodes.shape[0]

    @property
    def elements(self) -> list[Element]:
        return [Element(e, self.nodes[e], self.geometry_degree) for e in range(self.n_elements)]

    @cached_property
    def face_arrays(self) -> dict[str, np.ndarray]:
        """Face table as parallel integer arrays (minus/plus element and edge, flip)."""
        f = self.faces
        return {
            "minus_element": np.array([x.minus_element for x in f], dtype=int),
            "minus_edge": np.array([x.minus_edge for x in f], dtype=int),
            "plus_element": np.array([x.plus_element for x in f], dtype=int),
            "plus_edge": np.array([x.plus_edge for x in f], dtype=int),
            "flipped": np.array([x.flipped for x in f], dtype=bool),
        }

    @cached_property
    def _lattice(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.geometry_degree + 1)

    def geometry(self, ref_pts: np.ndarray):
        """Map shared reference points through every element.

        Returns x (ne, n, 2), J (ne, n, 2, 2) with J[..., r, c] = dx_r/dxi_c,
        and det (ne, n).
        """
        ref_pts = np.atleast_2d(ref_pts)
        vx, dx = lagrange_1d(self._lattice, ref_pts[:, 0])
        vy, dy = lagrange_1d(self._lattice, ref_pts[:, 1])
        x = np.einsum("eijd,ki,kj->ekd", self.nodes, vx, vy)
        dxi = np.einsum("eijd,ki,kj->ekd", self.nodes, dx, vy)
        deta = np.einsum("eijd,ki,kj->ekd", self.nodes, vx, dy)
        jac = np.stack([dxi, deta], axis=-1)
        return x, jac, _det2(jac)

    def geometry_pointwise(self, elems: np.ndarray, ref_pts: np.ndarray):
        """Like :meth:`geometry` but with one element per reference point."""
        elems = np.asarray(elems, dtype=int)
        ref_pts = np.asarray(ref_pts, dtype=float).reshape(-1, 2)
        vx, dx = lagrange_1d(self._lattice, ref_pts[:, 0])
        vy, dy = lagrange_1d(self._lattice, ref_pts[:, 1])
        nodes = self.nodes[elems]
        x = np.einsum("kijd,ki,kj->kd", nodes, vx, vy)
        dxi = np.einsum("kijd,ki,kj->kd", nodes, dx, vy)
        deta = np.einsum("kijd,ki,kj->kd", nodes, vx, dy)
        jac = np.stack([dxi, deta], axis=-1)
        return x, jac, _det2(jac)

    def face_geometry_pointwise(self, elems, edges, s):
        """Physical point, outward unit normal and surface Jacobian on element edges."""
        elems, edges, s = np.broadcast_arrays(np.asarray(elems), np.asarray(edges), np.asarray(s, dtype=float))
        shape = s.shape
        ref = edge_reference_points(edges.ravel(), s.ravel())
        x, jac, _ = self.geometry_pointwise(elems.ravel(), ref)
        # cofactor matrix maps reference normals to (unnormalized) physical normals
        cof = np.empty_like(jac)
        cof[:, 0, 0] = jac[:, 1, 1]
        cof[:, 0, 1] = -jac[:, 1, 0]
        cof[:, 1, 0] = -jac[:, 0, 1]
        cof[:, 1, 1] = jac[:, 0, 0]
        nvec = np.einsum("kab,kb->ka", cof, EDGE_REF_NORMALS[edges.ravel()])
        sjac = np.linalg.norm(nvec, axis=-1)
        if np.any(sjac <= 0.0):
            bad = sorted(set(elems.ravel()[sjac <= 0.0].tolist()))
            raise MeshError(f"degenerate face geometry (zero tangent) on elements {bad}")
        normal = nvec / sjac[:, None]
        return x.reshape(shape + (2,)), normal.reshape(shape + (2,)), sjac.reshape(shape)

    @cached_property
    def element_diameters(self) -> np.ndarray:
        pts = self.nodes.reshape(self.n_elements, -1, 2)
        d = np.linalg.norm(pts[:, :, None, :] - pts[:, None, :, :], axis=-1)
        return d.max(axis=(1, 2))

    @property
    def h_max(self) -> float:
        return float(self.element_diameters.max())

    def summary(self, **extra) -> dict:
        info = {
            "elements": self.n_elements,
            "faces": len(self.faces),
            "boundary_faces": sum(f.is_boundary for f in self.faces),
            "h_max": self.h_max,
            "level": self.level,
            "geometry_degree": self.geometry_degree,
        }
        info.update(extra)
        return info

    def summary_json(self, **extra) -> str:
        return json.dumps(self.summary(**extra))


def _det2(jac: np.ndarray) -> np.ndarray:
    return jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]


def _build_faces(vertex_ids: np.ndarray) -> tuple[Face, ...]:
    seen: dict[tuple[int, int], int] = {}
    pending = []
    for e, corners in enumerate(vertex_ids):
        for edge, (a, b) in enumerate(EDGE_CORNERS):
            va, vb = int(corners[a]), int(corners[b])
            key = (min(va, vb), max(va, vb))
            if key in seen:
                rec = pending[seen[key]]
                if rec[2] != BOUNDARY:
                    raise MeshError(f"edge {key} shared by more than two elements")
                rec[2], rec[3], rec[4] = e, edge, va != rec[5]
            else:
                seen[key] = len(pending)
                pending.append([e, edge, BOUNDARY, -1, False, va])
    return tuple(Face(i, r[0], r[1], r[2], r[3], bool(r[4])) for i, r in enumerate(pending))


def _check_jacobian(mesh: Mesh, n_check: int | None = None) -> None:
    """Reject elements whose Jacobian determinant is not positive.

    Samples Gauss points and a closed equispaced lattice (edges included),
    which also covers the points later seen by refined children.
    """
    n = n_check or max(2 * mesh.geometry_degree + 2, 6)
    t = np.linspace(-1.0, 1.0, 4 * mesh.geometry_degree + 5)
    lattice = np.column_stack([a.ravel() for a in np.meshgrid(t, t, indexing="ij")])
    pts = np.vstack([tensor_rule(gauss_legendre(n)).points, lattice])
    _, _, det = mesh.geometry(pts)
    bad = np.flatnonzero(det.min(axis=1) <= 0.0)
    if len(bad):
        raise MeshError(
            f"non-positive Jacobian determinant on {len(bad)} element(s): {bad.tolist()[:20]} "
            f"(min det {det.min():.3e})"
        )


def build_cartesian_mesh(nx: int, ny: int, bbox=(-1.0, 1.0, -1.0, 1.0), q: int = 1) -> Mesh:
    """Structured nx x ny mesh of the box (xmin, xmax, ymin, ymax)."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if q < 1:
        raise ValueError("geometry degree must be at least 1")
    x0, x1, y0, y1 = map(float, bbox)
    if not (x1 > x0 and y1 > y0):
        raise MeshError(f"degenerate bounding box {bbox}")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    t = (np.linspace(-1.0, 1.0, q + 1) + 1.0) / 2.0
    nodes = np.empty((nx * ny, q + 1, q + 1, 2))
    vids = np.empty((nx * ny, 4), dtype=int)
    for j in range(ny):
        for i in range(nx):
            e = j * nx + i
            gx = xs[i] + t * (xs[i + 1] - xs[i])
            gy = ys[j] + t * (ys[j + 1] - ys[j])
            nodes[e, :, :, 0] = gx[:, None]
            nodes[e, :, :, 1] = gy[None, :]
            v00 = j * (nx + 1) + i
            vids[e] = (v00, v00 + 1, v00 + nx + 2, v00 + nx + 1)
    return Mesh(nodes, vids, (x0, x1, y0, y1))


def perturb_vertices(mesh: Mesh, amplitude: float, seed: int = 0) -> Mesh:
    """Randomly displace interior vertices of a straight-sided Cartesian mesh.

    Each interior vertex moves by up to ``amplitude`` times the local cell
    size per axis; geometry nodes are re-interpolated bilinearly from the
    element corners, so shared edges stay conforming.
    """
    if amplitude == 0.0:
        return mesh
    if not 0.0 <= amplitude < 0.5:
        raise ValueError("perturbation amplitude must lie in [0, 0.5)")
    corners = mesh.nodes[:, [0, -1, -1, 0], [0, 0, -1, -1]]  # (ne, 4, 2) ccw
    nv = int(mesh.vertex_ids.max()) + 1
    pos = np.zeros((nv, 2))
    pos[mesh.vertex_ids.ravel()] = corners.reshape(-1, 2)
    size = np.zeros(nv)
    diam = np.linalg.norm(corners[:, 2] - corners[:, 0], axis=1) / np.sqrt(2.0)
    np.maximum.at(size, mesh.vertex_ids.ravel(), np.repeat(diam, 4))
    x0, x1, y0, y1 = mesh.bbox
    tol = 1e-12 * max(x1 - x0, y1 - y0)
    interior = (
        (pos[:, 0] > x0 + tol) & (pos[:, 0] < x1 - tol) & (pos[:, 1] > y0 + tol) & (pos[:, 1] < y1 - tol)
    )
    rng = np.random.default_rng(seed)
    shift = rng.uniform(-1.0, 1.0, (nv, 2)) * (amplitude * size)[:, None]
    pos = pos + np.where(interior[:, None], shift, 0.0)

    q = mesh.geometry_degree
    t = (np.linspace(-1.0, 1.0, q + 1) + 1.0) / 2.0
    a, b = np.meshgrid(t, t, indexing="ij")
    w = np.stack([(1 - a) * (1 - b), a * (1 - b), a * b, (1 - a) * b], axis=-1)  # (q+1, q+1, 4)
    nodes = np.einsum("ijc,ecd->eijd", w, pos[mesh.vertex_ids])
    moved = Mesh(nodes, mesh.vertex_ids.copy(), mesh.bbox, mesh.level)
    _check_jacobian(moved)
    return moved


def swirl_map(x, y, amplitude: float = 1.5):
    """Rotate (x, y) about the origin by amplitude * (x^2 - 1)(y^2 - 1)."""
    theta = amplitude * (x * x - 1.0) * (y * y - 1.0)
    c, s = np.cos(theta), np.sin(theta)
    return x * c - y * s, y * c + x * s


def apply_curving_map(mesh: Mesh, mapping: Callable = swirl_map, check_points: int | None = None) -> Mesh:
    """Move every geometry node through ``mapping(x, y) -> (X, Y)``."""
    X, Y = mapping(mesh.nodes[..., 0], mesh.nodes[..., 1])
    curved = Mesh(np.stack([X, Y], axis=-1), mesh.vertex_ids.copy(), mesh.bbox, mesh.level)
    _check_jacobian(curved, check_points)
    return curved


def refine_uniform(mesh: Mesh, check_points: int | None = None) -> Mesh:
    """Split each element into four; children re-interpolate the parent map."""
    q = mesh.geometry_degree
    lat = np.linspace(-1.0, 1.0, q + 1)
    vlat, _ = lagrange_1d(lat, (lat + 1.0) / 2.0 - 1.0)  # lower half of [-1, 1]
    vlat_hi, _ = lagrange_1d(lat, (lat + 1.0) / 2.0)  # upper half
    halves = (vlat, vlat_hi)

    ne = mesh.n_elements
    next_vid = int(mesh.vertex_ids.max()) + 1
    midpoint: dict[tuple[int, int], int] = {}
    nodes = np.empty((4 * ne, q + 1, q + 1, 2))
    vids = np.empty((4 * ne, 4), dtype=int)

    for e in range(ne):
        c = mesh.vertex_ids[e]
        mids = []
        for a, b in EDGE_CORNERS:
            key = (min(c[a], c[b]), max(c[a], c[b]))
            if key not in midpoint:
                midpoint[key] = next_vid
                next_vid += 1
            mids.append(midpoint[key])
        center = next_vid
        next_vid += 1
        grid = [
            [c[0], mids[3], c[3]],
            [mids[0], center, mids[2]],
            [c[1], mids[1], c[2]],
        ]  # grid[i][j], i along xi, j along eta
        for b in range(2):
            for a in range(2):
                k = 4 * e + 2 * b + a
                nodes[k] = np.einsum("ijd,ai,bj->abd", mesh.nodes[e], halves[a], halves[b])
                vids[k] = (grid[a][b], grid[a + 1][b], grid[a + 1][b + 1], grid[a][b + 1])

    fine = Mesh(nodes, vids, mesh.bbox, mesh.level + 1)
    _check_jacobian(fine, check_points)
    return fine


def map_to_physical(elem: Element, p):
    """Physical point, Jacobian (dx_r/dxi_c) and determinant at reference point p."""
    q = elem.geometry_degree
    lat = np.linspace(-1.0, 1.0, q + 1)
    vx, dx = lagrange_1d(lat, [p[0]])
    vy, dy = lagrange_1d(lat, [p[1]])
    n = elem.geometry_nodes
    x = np.einsum("ijd,i,j->d", n, vx[0], vy[0])
    jac = np.stack([np.einsum("ijd,i,j->d", n, dx[0], vy[0]), np.einsum("ijd,i,j->d", n, vx[0], dy[0])], axis=-1)
    return x, jac, float(_det2(jac))


def face_point_and_normal(mesh: Mesh, face: Face, s):
    """Physical point, outward unit normal of the minus element, surface Jacobian."""
    return mesh.face_geometry_pointwise(face.minus_element, face.minus_edge, s)


def plus_side_coordinate(flipped, s):
    return np.where(flipped, -np.asarray(s), np.asarray(s))
