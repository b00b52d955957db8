"""Discrete-ordinates transport on the DG space.

For each direction Omega_j the steady equation

    Omega_j . grad psi_j + sigma_t psi_j = sigma_s / (4 pi) phi + q_j

is an advection-reaction problem with constant velocity (Omega_j1, Omega_j2)
and reaction sigma_t. Scattering couples the directions through the scalar
flux phi = sum_j w_j psi_j and is resolved by source iteration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .basis import gauss_legendre
from .dg import (
    DGSpace,
    ReactionField,
    StabilizationSpec,
    assemble_system,
    constant_velocity,
    detect_reentrant_faces,
    count_reentrant,
    element_mass_blocks,
    stabilization_b0,
)
from .solver import SolveResult, SolverConfig, make_preconditioner, solve

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi


class TransportError(RuntimeError):
    pass


@dataclass(frozen=True)
class AngularQuadrature:
    directions: np.ndarray  # (N, 3) unit vectors
    weights: np.ndarray  # (N,), sum 4 pi
    exactness_degree: int

    def __len__(self) -> int:
        return len(self.weights)

    def moment(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(self.weights @ fn(self.directions))

    def permuted(self, order) -> "AngularQuadrature":
        order = np.asarray(order)
        return AngularQuadrature(self.directions[order], self.weights[order], self.exactness_degree)


def build_angular_quadrature(n_polar: int = 4, n_azimuthal: int = 12) -> AngularQuadrature:
    """Gauss-Legendre in the polar cosine times equal weights in azimuth."""
    if n_polar < 2 or n_azimuthal < 4:
        raise ValueError("need n_polar >= 2 and n_azimuthal >= 4")
    mu_rule = gauss_legendre(n_polar)
    phi = 2.0 * math.pi * (np.arange(n_azimuthal) + 0.5) / n_azimuthal
    mu, az = np.meshgrid(mu_rule.points, phi, indexing="ij")
    sin_t = np.sqrt(1.0 - mu**2)
    dirs = np.stack([sin_t * np.cos(az), sin_t * np.sin(az), mu], axis=-1).reshape(-1, 3)
    w = np.outer(mu_rule.weights, np.full(n_azimuthal, 2.0 * math.pi / n_azimuthal)).ravel()
    return AngularQuadrature(dirs, w, min(2 * n_polar - 1, n_azimuthal - 1))


@dataclass(frozen=True)
class TransportProblem:
    sigma_t: Callable[[np.ndarray], np.ndarray]
    sigma_s: Callable[[np.ndarray], np.ndarray]
    source: Callable[[int, np.ndarray], np.ndarray]  # q_j(x)
    inflow: Callable[[int, np.ndarray], np.ndarray]  # psi_j on the inflow boundary
    sigma_t_min: float


@dataclass(frozen=True)
class ManufacturedTransport:
    problem: TransportProblem
    quadrature: AngularQuadrature
    psi: Callable[[int, np.ndarray], np.ndarray]
    phi: Callable[[np.ndarray], np.ndarray]


def profile(x: np.ndarray) -> np.ndarray:
    """g = (x^2 + y^2 + 1)/2 + cos(3 (x + y) / 2)."""
    X, Y = x[..., 0], x[..., 1]
    return 0.5 * (X**2 + Y**2 + 1.0) + np.cos(1.5 * (X + Y))


def profile_gradient(x: np.ndarray) -> np.ndarray:
    X, Y = x[..., 0], x[..., 1]
    s = 1.5 * np.sin(1.5 * (X + Y))
    return np.stack([X - s, Y - s], axis=-1)


def manufactured_sn(quad: AngularQuadrature) -> ManufacturedTransport:
    """psi_j = (Omega_j1^2 + Omega_j2) g with sigma_s = 4/5, sigma_t = x^2 + y^2 + 1."""
    if quad.exactness_degree < 2:
        raise ValueError("angular quadrature must integrate degree-2 harmonics exactly")
    amp = quad.directions[:, 0] ** 2 + quad.directions[:, 1]

    def sigma_t(x):
        return x[..., 0] ** 2 + x[..., 1] ** 2 + 1.0

    def sigma_s(x):
        return np.full(np.shape(x)[:-1], 0.8)

    def phi(x):
        return FOUR_PI / 3.0 * profile(x)

    def psi(j, x):
        return amp[j] * profile(x)

    def source(j, x):
        om = quad.directions[j, :2]
        stream = np.einsum("...d,d->...", profile_gradient(x), om)
        return amp[j] * (stream + sigma_t(x) * profile(x)) - sigma_s(x) / FOUR_PI * phi(x)

    problem = TransportProblem(sigma_t, sigma_s, source, psi, 1.0)
    return ManufacturedTransport(problem, quad, psi, phi)


# ---------------------------------------------------------------------------
# directional solves


@dataclass
class _Direction:
    matrix: sp.csr_matrix
    rhs: np.ndarray  # fixed part: volume source + inflow
    precond: object


def _assemble_direction(space, omega, problem: TransportProblem, j: int, spec, vol_rule, face_rule, config):
    beta = constant_velocity(omega[:2])
    reaction = ReactionField(problem.sigma_t, problem.sigma_t_min)
    op = assemble_system(
        space,
        beta,
        reaction,
        spec,
        source=lambda x: problem.source(j, x),
        inflow=lambda x: problem.inflow(j, x),
        vol_rule=vol_rule,
        face_rule=face_rule,
    )
    return _Direction(op.matrix, op.rhs, make_preconditioner(op.matrix, space.block_size, config.preconditioner))


def directional_solve(
    space: DGSpace,
    omega: np.ndarray,
    sigma_t: Callable,
    rhs: Callable,
    inflow: Callable,
    sigma_t_min: Optional[float] = None,
    spec: StabilizationSpec = StabilizationSpec(),
    config: SolverConfig = SolverConfig(),
    vol_rule=None,
    face_rule=None,
) -> tuple[np.ndarray, SolveResult]:
    """Solve Omega . grad psi + sigma_t psi = rhs with psi = inflow on the inflow boundary."""
    vd = space.volume_data(vol_rule)
    st_min = float(sigma_t(vd.x).min()) if sigma_t_min is None else sigma_t_min
    if st_min <= 0.0:
        raise TransportError("sigma_t must be positive")
    op = assemble_system(
        space,
        constant_velocity(np.asarray(omega, dtype=float)[:2]),
        ReactionField(sigma_t, st_min),
        spec,
        source=rhs,
        inflow=inflow,
        vol_rule=vol_rule,
        face_rule=face_rule,
    )
    res = solve(op.matrix, op.rhs, space.block_size, config)
    if not res.converged:
        raise TransportError(f"directional solve failed (residual {res.residual:.3e})")
    return res.x, res


@dataclass
class AngularFluxSet:
    psi: np.ndarray  # (N, ndofs)
    phi: np.ndarray  # (ndofs,)
    iterations: int
    converged: bool
    changes: list[float] = field(default_factory=list)
    solver_iterations: int = 0

    @property
    def ratios(self) -> list[float]:
        c = self.changes
        return [b / a for a, b in zip(c[:-1], c[1:]) if a > 0]

    @property
    def contraction(self) -> Optional[float]:
        """Largest successive-change ratio after the first two sweeps."""
        r = self.ratios[1:]
        return max(r) if r else None


def scalar_flux(quad: AngularQuadrature, psi: np.ndarray) -> np.ndarray:
    return np.tensordot(quad.weights, psi, axes=(0, 0))


def source_iteration(
    problem: TransportProblem,
    quad: AngularQuadrature,
    space: DGSpace,
    tol: float = 1e-10,
    maxiter: int = 200,
    spec: StabilizationSpec = StabilizationSpec(),
    config: SolverConfig = SolverConfig(),
    vol_rule=None,
    face_rule=None,
) -> AngularFluxSet:
    """Lagged-scattering fixed point iteration starting from phi = 0."""
    vd = space.volume_data(vol_rule)
    st, ss = problem.sigma_t(vd.x), problem.sigma_s(vd.x)
    if np.any(ss < 0.0) or np.any(st <= ss):
        raise TransportError("need sigma_t > sigma_s >= 0 at every quadrature point")
    logger.info("scattering ratio sup sigma_s/sigma_t = %.3f", float((ss / st).max()))

    nb = space.block_size
    mass = element_mass_blocks(space, vol_rule)
    scatter = element_mass_blocks(space, vol_rule, lambda x: problem.sigma_s(x) / FOUR_PI)
    coupled = bool(np.any(scatter))

    dirs = [
        _assemble_direction(space, quad.directions[j], problem, j, spec, vol_rule, face_rule, config)
        for j in range(len(quad))
    ]
    psi = np.zeros((len(quad), space.ndofs))
    phi = np.zeros(space.ndofs)
    changes: list[float] = []
    n_solves = 0

    def norm(v):
        blocks = v.reshape(-1, nb)
        return math.sqrt(max(float(np.einsum("ei,eij,ej->", blocks, mass, blocks)), 0.0))

    for it in range(1, maxiter + 1):
        scat = np.einsum("eij,ej->ei", scatter, phi.reshape(-1, nb)).ravel()
        for j, d in enumerate(dirs):
            res = solve(d.matrix, d.rhs + scat, nb, config, M=d.precond, x0=psi[j])
            n_solves += res.iterations
            if not res.converged:
                raise TransportError(f"direction {j} failed to converge (residual {res.residual:.3e})")
            psi[j] = res.x
        new_phi = scalar_flux(quad, psi)
        change = norm(new_phi - phi)
        changes.append(change)
        phi = new_phi
        if not coupled or change <= tol * norm(phi):
            return AngularFluxSet(psi, phi, it, True, changes, n_solves)

    ratio = changes[-1] / changes[-2] if len(changes) > 1 else float("nan")
    raise TransportError(f"source iteration hit maxiter={maxiter}; last change ratio {ratio:.3f}")


# ---------------------------------------------------------------------------
# diagnostics helpers


def reentrant_counts(space: DGSpace, quad: AngularQuadrature, probe_count: int = 64) -> list[int]:
    return [
        count_reentrant(detect_reentrant_faces(space.mesh, constant_velocity(om[:2]), probe_count))
        for om in quad.directions
    ]


def mean_stabilization(space: DGSpace, quad: AngularQuadrature, spec=StabilizationSpec(), face_rule=None):
    """Angular average sum_j w_j b0_j / (4 pi) at the face quadrature points.

    Used as the jump weight of the scalar-flux DG norm.
    """
    fd = space.face_data(face_rule)
    bn = np.einsum("fkd,jd->jfk", fd.normal, quad.directions[:, :2])
    return np.tensordot(quad.weights, stabilization_b0(spec, bn), axes=(0, 0)) / FOUR_PI
