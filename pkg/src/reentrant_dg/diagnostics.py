"""Error norms, L2 projection, the reentrant quadrature error and rate tables."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .basis import gauss_legendre
from .dg import (
    DGSpace,
    PointFunction,
    StabilizationSpec,
    VelocityField,
    element_mass_blocks,
    stabilization_b0,
)
from .mesh import edge_reference_points, plus_side_coordinate


class OracleError(RuntimeError):
    pass


def enriched_points(space: DGSpace) -> int:
    return space.degree + space.mesh.geometry_degree + 3


# ---------------------------------------------------------------------------
# projection and norms


def l2_project(space: DGSpace, u: PointFunction, vol_rule=None) -> np.ndarray:
    """Coefficients of the elementwise L2 projection of ``u``."""
    vd = space.volume_data(vol_rule)
    mass = element_mass_blocks(space, vol_rule)
    load = np.einsum("eq,eq,qi->ei", vd.wdet, u(vd.x), vd.phi)
    try:
        coeffs = np.linalg.solve(mass, load[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular element mass matrix") from exc
    return coeffs.ravel()


def l2_norm(space: DGSpace, coeffs: np.ndarray, vol_rule=None) -> float:
    vals = space.evaluate(coeffs, vol_rule)
    return math.sqrt(float(np.sum(space.volume_data(vol_rule).wdet * vals**2)))


def l2_error(space: DGSpace, coeffs: np.ndarray, u_exact: Optional[PointFunction], vol_rule=None) -> float:
    """||u - u_h||_0 with an enriched volume rule unless one is given."""
    rule = vol_rule or space.volume_rule(enriched_points(space))
    vd = space.volume_data(rule)
    diff = space.evaluate(coeffs, rule)
    if u_exact is not None:
        diff = diff - u_exact(vd.x)
    return math.sqrt(float(np.sum(vd.wdet * diff**2)))


def jump_seminorm_sq(
    space: DGSpace,
    coeffs: np.ndarray,
    b0: np.ndarray,
    face_rule=None,
    u_exact: Optional[PointFunction] = None,
) -> float:
    """sum_e I_e[b0 [[v]] . [[v]]] for v = u_exact - u_h (or v = u_h when u_exact is None).

    ``b0`` holds the stabilization values at the face points, shape (nf, nq).
    On boundary faces the exterior trace of v is zero.
    """
    fd = space.face_data(face_rule)
    c = coeffs.reshape(-1, space.block_size)
    vm = np.einsum("fki,fi->fk", fd.phi_minus, c[fd.minus])
    vp = np.einsum("fki,fi->fk", fd.phi_plus, c[np.maximum(fd.plus, 0)])
    if u_exact is not None:
        ux = u_exact(fd.x)
        vm, vp = ux - vm, ux - vp
    vp = np.where(fd.boundary[:, None], 0.0, vp)
    return float(np.sum(fd.wsj * b0 * (vm - vp) ** 2))


def face_b0_values(space: DGSpace, beta: VelocityField, spec: StabilizationSpec, face_rule=None) -> np.ndarray:
    fd = space.face_data(face_rule)
    bn = np.einsum("fkd,fkd->fk", beta(fd.x), fd.normal)
    return stabilization_b0(spec, bn)


def dg_norm(space, coeffs, beta, spec, face_rule=None, vol_rule=None) -> float:
    """Quadrature DG norm of a discrete function."""
    b0 = face_b0_values(space, beta, spec, face_rule)
    return math.sqrt(l2_norm(space, coeffs, vol_rule) ** 2 + jump_seminorm_sq(space, coeffs, b0, face_rule))


def dg_norm_error(
    space: DGSpace,
    coeffs: np.ndarray,
    u_exact: PointFunction,
    beta: VelocityField,
    spec: StabilizationSpec,
    face_rule=None,
    vol_rule=None,
    b0: Optional[np.ndarray] = None,
) -> float:
    """|||u - u_h||| with face terms at the assembly face points.

    ``b0`` may be passed directly (e.g. an angular average for transport).
    """
    if b0 is None:
        b0 = face_b0_values(space, beta, spec, face_rule)
    l2 = l2_error(space, coeffs, u_exact, vol_rule)
    return math.sqrt(l2**2 + jump_seminorm_sq(space, coeffs, b0, face_rule, u_exact))


# ---------------------------------------------------------------------------
# reentrant quadrature error


def find_roots(fn: Callable[[np.ndarray], np.ndarray], probe_count: int = 64, tol: float = 1e-13) -> list[float]:
    """Sign changes of a scalar function on [-1, 1], bracketed on a probe grid and bisected."""
    s = np.linspace(-1.0, 1.0, probe_count)
    v = fn(s)
    roots = [float(s[k]) for k in np.flatnonzero(v == 0.0) if 0 < k < probe_count - 1]
    for k in np.flatnonzero(v[:-1] * v[1:] < 0.0):
        a, b, fa = s[k], s[k + 1], v[k]
        while b - a > tol:
            mid = 0.5 * (a + b)
            fm = fn(np.array([mid]))[0]
            if fm == 0.0:
                a = b = mid
                break
            if (fm < 0.0) == (fa < 0.0):
                a, fa = mid, fm
            else:
                b = mid
        roots.append(float(0.5 * (a + b)))
    return sorted(roots)


def integrate_face_adaptive(
    integrand: Callable[[np.ndarray], np.ndarray],
    sign_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    tol: float = 1e-12,
    n_points: int = 20,
    probe_count: int = 64,
    max_roots: int = 8,
    label=None,
):
    """Integrate a piecewise-smooth integrand over s in [-1, 1].

    The interval is split at the sign changes of ``sign_fn`` and each piece
    gets an ``n_points`` Gauss rule. ``integrand(s)`` returns an array whose
    leading axis runs over s; the result has the trailing shape. The answer
    is re-checked with every piece halved.
    """
    roots = find_roots(sign_fn, probe_count) if sign_fn is not None else []
    if len(roots) > max_roots:
        raise OracleError(f"{len(roots)} sign changes on face {label}; refusing pathological field")
    breaks = np.array([-1.0] + roots + [1.0])
    rule = gauss_legendre(n_points)

    def composite(edges):
        a, b = edges[:-1], edges[1:]
        half = 0.5 * (b - a)
        s = (0.5 * (a + b))[:, None] + half[:, None] * rule.points[None, :]
        w = half[:, None] * rule.weights[None, :]
        vals = integrand(s.ravel())
        return np.tensordot(w.ravel(), vals, axes=(0, 0))

    coarse = composite(breaks)
    fine = composite(np.sort(np.concatenate([breaks, 0.5 * (breaks[:-1] + breaks[1:])])))
    scale = max(1.0, float(np.max(np.abs(fine))))
    if np.max(np.abs(fine - coarse)) > tol * scale:
        raise OracleError(f"adaptive face integral did not converge on face {label}")
    return fine


@dataclass
class QResult:
    total: float
    per_face: np.ndarray

    @property
    def per_face_mean(self) -> float:
        return float(self.per_face.mean()) if len(self.per_face) else 0.0


def _face_pair_integrand(space: DGSpace, beta: VelocityField, spec: StabilizationSpec, f: int):
    """Integrand s -> b0 [[phi_i]].[[phi_j]] sjac over the 2 nb trace functions of face f."""
    mesh = space.mesh
    face = mesh.faces[f]
    nb = space.block_size

    def traces(s):
        x, n, sjac = mesh.face_geometry_pointwise(face.minus_element, face.minus_edge, s)
        bn = np.einsum("kd,kd->k", beta(x), n)
        phi = np.zeros((len(s), 2 * nb))
        phi[:, :nb] = space.basis.eval(edge_reference_points(face.minus_edge, s))
        if not face.is_boundary:
            sp_ = plus_side_coordinate(face.flipped, s)
            phi[:, nb:] = -space.basis.eval(edge_reference_points(face.plus_edge, sp_))
        return bn, sjac, phi

    def integrand(s):
        bn, sjac, phi = traces(s)
        b0 = stabilization_b0(spec, bn)
        return (b0 * sjac)[:, None, None] * phi[:, :, None] * phi[:, None, :]

    def sign_fn(s):
        return traces(s)[0]

    return integrand, sign_fn


def reentrant_quadrature_error(
    space: DGSpace,
    beta: VelocityField,
    spec: StabilizationSpec = StabilizationSpec(),
    face_rule=None,
    tol: float = 1e-12,
    faces=None,
) -> QResult:
    """Per-face max_{ij} |exact - I_e| of b0 [[phi_i]].[[phi_j]], and its sum.

    Faces on which beta . n keeps one sign are integrated by the oracle
    without splitting, which is how their Q_e comes out at roundoff.
    """
    rule = face_rule or space.face_rule()
    fd = space.face_data(rule)
    bn = np.einsum("fkd,fkd->fk", beta(fd.x), fd.normal)
    b0 = stabilization_b0(spec, bn)
    phi = np.concatenate([fd.phi_minus, -fd.phi_plus], axis=2)
    quad = np.einsum("fk,fki,fkj->fij", fd.wsj * b0, phi, phi)

    idx = range(len(space.mesh.faces)) if faces is None else faces
    per_face = np.zeros(len(space.mesh.faces))
    for f in idx:
        integrand, sign_fn = _face_pair_integrand(space, beta, spec, f)
        exact = integrate_face_adaptive(integrand, sign_fn, tol=tol, label=f)
        per_face[f] = np.abs(exact - quad[f]).max()
    return QResult(float(per_face.sum()), per_face)


# ---------------------------------------------------------------------------
# convergence tables


def convergence_rates(errors) -> list[Optional[float]]:
    """log2(e_{k-1} / e_k) for consecutive entries; None where undefined."""
    rates: list[Optional[float]] = []
    for prev, cur in zip(errors[:-1], errors[1:]):
        if prev is None or cur is None or not (prev > 0 and cur > 0):
            rates.append(None)
        else:
            rates.append(math.log2(prev / cur))
    return rates


@dataclass
class ErrorRecord:
    level: int
    h: float
    dofs: int
    reentrant: float
    Q: float
    l2_error: float
    dg_error: float


CSV_HEADER = ("level", "h", "dofs", "reentrant", "Q", "Q_rate", "l2", "l2_rate", "dg", "dg_rate")


@dataclass
class ConvergenceTable:
    records: list[ErrorRecord] = field(default_factory=list)

    def append(self, rec: ErrorRecord) -> None:
        self.records.append(rec)

    def _rates(self, attr):
        return [None] + convergence_rates([getattr(r, attr) for r in self.records])

    @property
    def q_rates(self):
        return self._rates("Q")

    @property
    def l2_rates(self):
        return self._rates("l2_error")

    @property
    def dg_rates(self):
        return self._rates("dg_error")

    def to_csv(self, precision: int = 6) -> str:
        def num(v):
            return "" if v is None else f"{v:.{precision - 1}e}"

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r, qr, lr, dr in zip(self.records, self.q_rates, self.l2_rates, self.dg_rates):
            reentrant = str(int(r.reentrant)) if float(r.reentrant).is_integer() else f"{r.reentrant:.2f}"
            writer.writerow(
                [r.level, num(r.h), r.dofs, reentrant, num(r.Q), num(qr), num(r.l2_error), num(lr), num(r.dg_error), num(dr)]
            )
        return buf.getvalue()

    def write_csv(self, path, precision: int = 6) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv(precision))
