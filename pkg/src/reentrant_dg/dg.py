"""DG space, face classification and assembly of the quadrature-based DG form.

The bilinear form is

    B(u, v) = -(u, beta . grad_h v) + (c u, v)
              + sum_faces I_e[(beta . n) {u}, v- - v+]
              + sum_faces I_e[b0 (u- - u+), v- - v+]

with every face term evaluated by one fixed Gauss rule, including faces on
which beta . n changes sign. On the domain boundary the exterior trace is
the inflow datum g where beta . n < 0 and the interior trace elsewhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .basis import BasisSet, QuadratureRule, gauss_legendre, tensor_rule
from .mesh import Mesh, MeshError, edge_reference_points, plus_side_coordinate

logger = logging.getLogger(__name__)

PointFunction = Callable[[np.ndarray], np.ndarray]

REENTRANT_THRESHOLD = 1e-12


@dataclass(frozen=True)
class VelocityField:
    """Velocity beta(x) and its closed-form divergence; x has a trailing axis of 2."""

    value: PointFunction
    divergence: PointFunction

    def __call__(self, x):
        return self.value(x)


def constant_velocity(b) -> VelocityField:
    b = np.asarray(b, dtype=float)
    return VelocityField(
        lambda x: np.broadcast_to(b, np.shape(x)).copy(),
        lambda x: np.zeros(np.shape(x)[:-1]),
    )


def rotating_velocity() -> VelocityField:
    """beta = (-y, x); divergence free."""
    return VelocityField(
        lambda x: np.stack([-x[..., 1], x[..., 0]], axis=-1),
        lambda x: np.zeros(np.shape(x)[:-1]),
    )


@dataclass(frozen=True)
class ReactionField:
    c: PointFunction
    c0: float


def constant_reaction(c: float) -> ReactionField:
    return ReactionField(lambda x: np.full(np.shape(x)[:-1], float(c)), float(c))


@dataclass(frozen=True)
class StabilizationSpec:
    """Choice of b0: ``upwind`` (|beta.n|/2), ``scaled`` (theta0 |beta.n|) or ``mean_value`` (0)."""

    kind: str = "upwind"
    theta0: float = 0.5

    def __post_init__(self):
        if self.kind not in ("upwind", "scaled", "mean_value"):
            raise ValueError(f"unknown stabilization kind {self.kind!r}")
        if self.kind == "upwind" and self.theta0 != 0.5:
            object.__setattr__(self, "theta0", 0.5)
        if self.kind == "scaled" and not self.theta0 > 0:
            raise ValueError("theta0 must be positive for scaled stabilization")

    def b0(self, beta_dot_n):
        return stabilization_b0(self, beta_dot_n)


def stabilization_b0(spec: StabilizationSpec, beta_dot_n):
    bn = np.asarray(beta_dot_n, dtype=float)
    if spec.kind == "mean_value":
        return np.zeros_like(bn)
    theta = 0.5 if spec.kind == "upwind" else spec.theta0
    return theta * np.abs(bn)


# ---------------------------------------------------------------------------
# discrete space and precomputed geometry


@dataclass(frozen=True)
class VolumeData:
    x: np.ndarray  # (ne, nq, 2)
    wdet: np.ndarray  # (ne, nq) weight * det J
    det: np.ndarray
    phi: np.ndarray  # (nq, nb)
    grad: np.ndarray  # (ne, nq, nb, 2) physical gradients


@dataclass(frozen=True)
class FaceData:
    x: np.ndarray  # (nf, nq, 2)
    normal: np.ndarray  # (nf, nq, 2), outward from the minus element
    wsj: np.ndarray  # (nf, nq) weight * surface Jacobian
    phi_minus: np.ndarray  # (nf, nq, nb)
    phi_plus: np.ndarray  # (nf, nq, nb); zero on boundary faces
    minus: np.ndarray
    plus: np.ndarray
    boundary: np.ndarray  # bool mask


class DGSpace:
    """Broken tensor-product polynomials of degree p; element e owns dofs [e*nb, (e+1)*nb)."""

    def __init__(self, mesh: Mesh, degree: int):
        self.mesh = mesh
        self.basis = BasisSet(degree)
        self._vol_cache: dict[bytes, VolumeData] = {}
        self._face_cache: dict[bytes, FaceData] = {}

    @property
    def degree(self) -> int:
        return self.basis.degree

    @property
    def block_size(self) -> int:
        return self.basis.dim

    @property
    def ndofs(self) -> int:
        return self.mesh.n_elements * self.block_size

    @property
    def dof_map(self) -> np.ndarray:
        nb = self.block_size
        return np.arange(self.ndofs).reshape(self.mesh.n_elements, nb)

    def default_points(self) -> int:
        return self.degree + self.mesh.geometry_degree + 1

    def volume_rule(self, n: Optional[int] = None) -> QuadratureRule:
        return tensor_rule(gauss_legendre(n or self.default_points()))

    def face_rule(self, n: Optional[int] = None) -> QuadratureRule:
        return gauss_legendre(n or self.default_points())

    def volume_data(self, rule: Optional[QuadratureRule] = None) -> VolumeData:
        rule = rule or self.volume_rule()
        key = rule.points.tobytes()
        if key in self._vol_cache:
            return self._vol_cache[key]
        x, jac, det = self.mesh.geometry(rule.points)
        if np.any(det <= 0.0):
            bad = np.flatnonzero(det.min(axis=1) <= 0.0)
            raise MeshError(f"non-positive Jacobian at volume quadrature points of elements {bad.tolist()[:20]}")
        jinv = np.linalg.inv(jac)
        ref_grad = self.basis.eval_grad(rule.points)
        # grad_phys = J^{-T} grad_ref
        grad = np.einsum("eqcr,qic->eqir", jinv, ref_grad)
        data = VolumeData(x, rule.weights[None, :] * det, det, self.basis.eval(rule.points), grad)
        self._vol_cache[key] = data
        return data

    def face_data(self, rule: Optional[QuadratureRule] = None) -> FaceData:
        rule = rule or self.face_rule()
        key = rule.points.tobytes()
        if key in self._face_cache:
            return self._face_cache[key]
        fa = self.mesh.face_arrays
        s = rule.points[None, :]
        minus, plus = fa["minus_element"], fa["plus_element"]
        boundary = plus < 0
        x, normal, sjac = self.mesh.face_geometry_pointwise(minus[:, None], fa["minus_edge"][:, None], s)
        nf, nq = x.shape[:2]
        nb = self.block_size
        ref_m = edge_reference_points(fa["minus_edge"][:, None], s)
        phi_m = self.basis.eval(ref_m.reshape(-1, 2)).reshape(nf, nq, nb)
        sp_ = plus_side_coordinate(fa["flipped"][:, None], s)
        ref_p = edge_reference_points(np.maximum(fa["plus_edge"], 0)[:, None], sp_)
        phi_p = self.basis.eval(ref_p.reshape(-1, 2)).reshape(nf, nq, nb)
        phi_p[boundary] = 0.0
        data = FaceData(x, normal, rule.weights[None, :] * sjac, phi_m, phi_p, minus, plus, boundary)
        self._face_cache[key] = data
        return data

    def evaluate(self, coeffs: np.ndarray, rule: Optional[QuadratureRule] = None) -> np.ndarray:
        """Values of a coefficient vector at volume quadrature points, shape (ne, nq)."""
        vd = self.volume_data(rule)
        return np.einsum("qi,ei->eq", vd.phi, coeffs.reshape(-1, self.block_size))

    def evaluate_at(self, coeffs: np.ndarray, elems: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        phi = self.basis.eval(ref_pts)
        return np.einsum("ki,ki->k", phi, coeffs.reshape(-1, self.block_size)[elems])


# ---------------------------------------------------------------------------
# reentrant faces


@dataclass
class FaceClassification:
    face_id: int
    reentrant: bool
    tangential: bool
    beta_dot_n: np.ndarray
    roots: list = field(default_factory=list)


def face_beta_dot_n(mesh: Mesh, beta: VelocityField, s: np.ndarray, faces=None) -> np.ndarray:
    """beta . n- at face coordinates s for every face (or the selected faces); shape (nf, len(s))."""
    fa = mesh.face_arrays
    idx = np.arange(len(mesh.faces)) if faces is None else np.asarray(faces, dtype=int)
    x, n, _ = mesh.face_geometry_pointwise(fa["minus_element"][idx, None], fa["minus_edge"][idx, None], s[None, :])
    return np.einsum("fkd,fkd->fk", beta(x), n)


def detect_reentrant_faces(mesh: Mesh, beta: VelocityField, probe_count: int = 64) -> list[FaceClassification]:
    """Classify each face by whether beta . n changes sign along it."""
    if probe_count < 8:
        raise ValueError("probe_count must be at least 8")
    s = np.linspace(-1.0, 1.0, probe_count)
    bn = face_beta_dot_n(mesh, beta, s)
    lo, hi = bn.min(axis=1), bn.max(axis=1)
    reentrant = (lo < -REENTRANT_THRESHOLD) & (hi > REENTRANT_THRESHOLD)
    touches = np.abs(bn).min(axis=1) <= REENTRANT_THRESHOLD
    out = []
    for f in range(len(mesh.faces)):
        roots = []
        if reentrant[f]:
            row = bn[f]
            # roots landing exactly on a probe, then brackets (linear interpolation)
            roots = [float(s[k]) for k in np.flatnonzero(row[1:-1] == 0.0) + 1]
            for k in np.flatnonzero(row[:-1] * row[1:] < 0):
                t = row[k] / (row[k] - row[k + 1])
                roots.append(float(s[k] + t * (s[k + 1] - s[k])))
            roots.sort()
        out.append(FaceClassification(f, bool(reentrant[f]), bool(touches[f] and not reentrant[f]), bn[f], roots))
    return out


def count_reentrant(classes: list[FaceClassification]) -> int:
    return sum(c.reentrant for c in classes)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class AssembledOperator:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    block_size: int

    @property
    def n_elements(self) -> int:
        return self.matrix.shape[0] // self.block_size

    def dofs(self, elem: int) -> np.ndarray:
        nb = self.block_size
        return np.arange(elem * nb, (elem + 1) * nb)

    def write_triplets(self, path, rhs_path=None, precision: int = 17) -> None:
        """Write ``row col value`` lines (0-based); the rhs goes to ``rhs_path`` as ``row value``."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r} {c} {v:.{precision}e}\n")
        if rhs_path is not None:
            with open(rhs_path, "w") as fh:
                for r, v in enumerate(self.rhs):
                    fh.write(f"{r} {v:.{precision}e}\n")


def read_triplets(path, shape=None) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    rows, cols, vals = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
    if shape is None:
        n = int(max(rows.max(), cols.max())) + 1
        shape = (n, n)
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


def assemble_volume(space: DGSpace, beta: VelocityField, reaction: ReactionField, vol_rule=None) -> np.ndarray:
    """Element blocks of -(u, beta . grad v) + (c u, v); block[e, i, j] pairs test i with trial j."""
    vd = space.volume_data(vol_rule)
    b = beta(vd.x)  # (ne, nq, 2)
    c = reaction.c(vd.x)  # (ne, nq)
    bgrad = np.einsum("eqd,eqid->eqi", b, vd.grad)  # beta . grad phi_i
    adv = -np.einsum("eq,eqi,qj->eij", vd.wdet, bgrad, vd.phi)
    react = np.einsum("eq,qi,qj->eij", vd.wdet * c, vd.phi, vd.phi)
    return adv + react


def element_mass_blocks(space: DGSpace, vol_rule=None, weight: Optional[PointFunction] = None) -> np.ndarray:
    vd = space.volume_data(vol_rule)
    w = vd.wdet if weight is None else vd.wdet * weight(vd.x)
    return np.einsum("eq,qi,qj->eij", w, vd.phi, vd.phi)


def _flux_coefficients(bn, spec: StabilizationSpec, flux: str):
    """Weights multiplying u- and u+ in the face integrand (against v- - v+)."""
    if flux == "upwind":
        up = bn >= 0.0
        return np.where(up, bn, 0.0), np.where(up, 0.0, bn)
    if flux != "stabilized":
        raise ValueError(f"unknown flux {flux!r}")
    b0 = stabilization_b0(spec, bn)
    return 0.5 * bn + b0, 0.5 * bn - b0


def assemble_faces(
    space: DGSpace,
    beta: VelocityField,
    spec: StabilizationSpec,
    face_rule=None,
    inflow: Optional[PointFunction] = None,
    flux: str = "stabilized",
):
    """Face contributions.

    Returns (rows, cols, vals) of the face matrix in COO form and the
    inflow part of the right-hand side.
    """
    fd = space.face_data(face_rule)
    nb = space.block_size
    bn = np.einsum("fkd,fkd->fk", beta(fd.x), fd.normal)
    cm, cp = _flux_coefficients(bn, spec, flux)

    bnd = fd.boundary
    rhs = np.zeros(space.ndofs)
    inflow_pts = bnd[:, None] & (bn < 0.0)
    if np.any(inflow_pts):
        if inflow is None:
            raise ValueError("inflow data required: beta . n < 0 on part of the boundary")
        g = np.zeros_like(bn)
        g[bnd] = inflow(fd.x[bnd])
        g = np.where(inflow_pts, g, 0.0)
        load = -np.einsum("fk,fk,fki->fi", fd.wsj, cp * g, fd.phi_minus)
        np.add.at(rhs, (fd.minus[:, None] * nb + np.arange(nb)[None, :]).ravel(), load.ravel())
    # outflow boundary points: exterior trace equals the interior one
    cm = np.where(bnd[:, None] & (bn >= 0.0), cm + cp, cm)
    cp = np.where(bnd[:, None], 0.0, cp)

    w_m, w_p = fd.wsj * cm, fd.wsj * cp
    mm = np.einsum("fk,fki,fkj->fij", w_m, fd.phi_minus, fd.phi_minus)
    mp = np.einsum("fk,fki,fkj->fij", w_p, fd.phi_minus, fd.phi_plus)
    pm = -np.einsum("fk,fki,fkj->fij", w_m, fd.phi_plus, fd.phi_minus)
    pp = -np.einsum("fk,fki,fkj->fij", w_p, fd.phi_plus, fd.phi_plus)

    rows, cols, vals = [], [], []
    interior = ~bnd

    def add(block, re, ce):
        rows.append(_block_index(re, nb, axis=1).ravel())
        cols.append(_block_index(ce, nb, axis=2).ravel())
        vals.append(block.ravel())

    add(mm, fd.minus, fd.minus)
    add(mp[interior], fd.minus[interior], fd.plus[interior])
    add(pm[interior], fd.plus[interior], fd.minus[interior])
    add(pp[interior], fd.plus[interior], fd.plus[interior])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), rhs


def assemble_rhs(space: DGSpace, f: PointFunction, vol_rule=None) -> np.ndarray:
    """Load vector (f, phi_i) over all elements."""
    vd = space.volume_data(vol_rule)
    return np.einsum("eq,eq,qi->ei", vd.wdet, f(vd.x), vd.phi).ravel()


def _block_index(elems: np.ndarray, nb: int, axis: int) -> np.ndarray:
    """Global dof indices of (n, nb, nb) element blocks varying along ``axis``."""
    local = np.arange(nb)[:, None] if axis == 1 else np.arange(nb)[None, :]
    return np.broadcast_to(elems[:, None, None] * nb + local[None], (len(elems), nb, nb))


def _blocks_to_coo(blocks: np.ndarray):
    elems = np.arange(blocks.shape[0])
    nb = blocks.shape[1]
    return _block_index(elems, nb, 1).ravel(), _block_index(elems, nb, 2).ravel(), blocks.ravel()


def assemble_system(
    space: DGSpace,
    beta: VelocityField,
    reaction: ReactionField,
    spec: StabilizationSpec = StabilizationSpec(),
    source: Optional[PointFunction] = None,
    inflow: Optional[PointFunction] = None,
    vol_rule=None,
    face_rule=None,
    flux: str = "stabilized",
    check_c0: bool = True,
) -> AssembledOperator:
    """Global sparse operator and right-hand side."""
    if check_c0:
        vd = space.volume_data(vol_rule)
        margin = reaction.c(vd.x) + 0.5 * beta.divergence(vd.x)
        if margin.min() < reaction.c0 - 1e-12:
            raise ValueError(f"c + div(beta)/2 = {margin.min():.3e} drops below c0 = {reaction.c0}")
    vr, vc, vv = _blocks_to_coo(assemble_volume(space, beta, reaction, vol_rule))
    fr, fc, fv, rhs = assemble_faces(space, beta, spec, face_rule, inflow, flux)
    n = space.ndofs
    mat = sp.coo_matrix(
        (np.concatenate([vv, fv]), (np.concatenate([vr, fr]), np.concatenate([vc, fc]))), shape=(n, n)
    ).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    if source is not None:
        rhs = rhs + assemble_rhs(space, source, vol_rule)
    return AssembledOperator(mat, rhs, space.block_size)
