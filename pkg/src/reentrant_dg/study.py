"""Convergence studies for the advection and transport problems.

A study builds a jittered 4x4 square mesh, swirls it, and refines it
uniformly; on every level it solves, measures the L2 and DG-norm errors and
the reentrant quadrature error Q, and tabulates rates.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import problems
from .dg import (
    DGSpace,
    StabilizationSpec,
    assemble_system,
    constant_velocity,
    count_reentrant,
    detect_reentrant_faces,
)
from .diagnostics import (
    ConvergenceTable,
    ErrorRecord,
    dg_norm_error,
    l2_error,
    reentrant_quadrature_error,
)
from .mesh import Mesh, apply_curving_map, build_cartesian_mesh, perturb_vertices, refine_uniform, swirl_map
from .solver import SolverConfig, solve
from .transport import (
    TransportError,
    build_angular_quadrature,
    manufactured_sn,
    mean_stabilization,
    source_iteration,
)

logger = logging.getLogger(__name__)

STAB_KINDS = {"upwind": "upwind", "scaled": "scaled", "mean": "mean_value", "mean_value": "mean_value"}


class ConfigError(ValueError):
    """Invalid study configuration; the message names the offending field."""


class StudyError(RuntimeError):
    """A solve failed during a study; the message names the level."""


@dataclass
class StudyConfig:
    problem: str = "advection"
    degree: int = 3
    geometry_degree: int = 2
    nx: int = 4
    ny: int = 4
    refinements: int = 4  # uniform refinement steps; the table has refinements + 1 rows
    stabilization: str = "upwind"
    theta0: float = 0.5
    face_points: Optional[int] = None  # default p + q + 1
    volume_points: Optional[int] = None
    solver_tol: float = 1e-11
    solver_restart: int = 60
    solver_maxiter: int = 5000
    preconditioner: str = "ilu"
    jitter: float = 0.1
    seed: int = 0
    swirl: float = 1.5
    q_faces: str = "all"  # "all" or "reentrant"
    n_polar: int = 4
    n_azimuthal: int = 12
    si_tol: float = 1e-10
    si_maxiter: int = 200
    output: Optional[str] = None
    summary: Optional[str] = None
    precision: int = 6

    def validate(self) -> "StudyConfig":
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(f"{name}: {msg}")

        need(self.problem in ("advection", "transport"), "problem", f"unknown problem {self.problem!r}")
        need(self.degree >= 0, "degree", "must be >= 0")
        need(self.geometry_degree >= 1, "geometry_degree", "must be >= 1")
        need(self.nx >= 1 and self.ny >= 1, "nx/ny", "must be >= 1")
        need(self.refinements >= 0, "refinements", "must be >= 0")
        need(self.stabilization in STAB_KINDS, "stabilization", f"unknown kind {self.stabilization!r}")
        need(STAB_KINDS[self.stabilization] != "scaled" or self.theta0 > 0, "theta0", "must be > 0")
        for name in ("face_points", "volume_points"):
            v = getattr(self, name)
            need(v is None or v >= 1, name, "must be >= 1")
        need(self.solver_tol > 0 and self.si_tol > 0, "solver_tol/si_tol", "must be > 0")
        need(self.preconditioner in ("ilu", "block_jacobi", "none"), "preconditioner", "unknown preconditioner")
        need(0 <= self.jitter < 0.5, "jitter", "must lie in [0, 0.5)")
        need(self.q_faces in ("all", "reentrant"), "q_faces", "must be 'all' or 'reentrant'")
        need(self.n_polar >= 2 and self.n_azimuthal >= 4, "n_polar/n_azimuthal", "need >= 2 and >= 4")
        need(self.precision >= 1, "precision", "must be >= 1")
        return self

    @property
    def stab_spec(self) -> StabilizationSpec:
        return StabilizationSpec(STAB_KINDS[self.stabilization], self.theta0)

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(self.solver_tol, self.solver_restart, self.solver_maxiter, self.preconditioner)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(StudyConfig)}


def _coerce(name: str, value: Any):
    """Check a JSON value against the field's declared type."""
    default = _FIELDS[name].default
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"{name}: null not allowed")
    kind = type(default) if default is not None else int
    if name in ("output", "summary"):
        kind = str
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{name}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def load_config_file(path) -> dict:
    text = Path(path).read_text()
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def parse_config(path=None, overrides: Optional[dict] = None, data: Optional[dict] = None) -> StudyConfig:
    """Defaults, then the JSON file (or ``data``), then non-None ``overrides``.

    Unknown keys are rejected.
    """
    values: dict = {}
    src = dict(data or {})
    if path is not None:
        src.update(load_config_file(path))
    src.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, val in src.items():
        if key not in _FIELDS:
            raise ConfigError(f"{key}: unknown configuration key")
        values[key] = _coerce(key, val)
    return StudyConfig(**values).validate()


# ---------------------------------------------------------------------------
# running


def base_mesh(cfg: StudyConfig) -> Mesh:
    mesh = build_cartesian_mesh(cfg.nx, cfg.ny, q=cfg.geometry_degree)
    if cfg.jitter > 0:
        mesh = perturb_vertices(mesh, cfg.jitter, cfg.seed)
    if cfg.swirl:
        mesh = apply_curving_map(mesh, lambda x, y: swirl_map(x, y, cfg.swirl))
    return mesh


def mesh_levels(cfg: StudyConfig):
    mesh = base_mesh(cfg)
    yield mesh
    for _ in range(cfg.refinements):
        mesh = refine_uniform(mesh)
        yield mesh


@dataclass
class StudyResult:
    table: ConvergenceTable
    levels: list[dict] = field(default_factory=list)
    config: Optional[StudyConfig] = None
    wall_time: float = 0.0

    def summary(self) -> dict:
        return {"config": self.config.to_dict() if self.config else None, "levels": self.levels, "wall_time": self.wall_time}


def _rules(space: DGSpace, cfg: StudyConfig):
    return space.volume_rule(cfg.volume_points), space.face_rule(cfg.face_points)


def _advection_level(space: DGSpace, cfg: StudyConfig, level: int):
    spec = cfg.stab_spec
    vol_rule, face_rule = _rules(space, cfg)
    beta = problems.velocity
    classes = detect_reentrant_faces(space.mesh, beta)
    n_re = count_reentrant(classes)
    op = assemble_system(
        space, beta, problems.reaction, spec, problems.source, problems.exact_solution, vol_rule, face_rule
    )
    res = solve(op.matrix, op.rhs, space.block_size, cfg.solver)
    if not res.converged:
        raise StudyError(f"level {level}: GMRES failed (relative residual {res.residual:.3e} after {res.iterations} its)")
    faces = None if cfg.q_faces == "all" else [c.face_id for c in classes if c.reentrant]
    q = reentrant_quadrature_error(space, beta, spec, face_rule, faces=faces)
    l2 = l2_error(space, res.x, problems.exact_solution)
    dg = dg_norm_error(space, res.x, problems.exact_solution, beta, spec, face_rule)
    info = {"reentrant_faces": n_re, "solver_iterations": res.iterations, "solver_residual": res.residual,
            "Q_per_face_mean": q.per_face_mean}
    return ErrorRecord(level, space.mesh.h_max, space.ndofs, n_re, q.total, l2, dg), info


def _transport_level(space: DGSpace, cfg: StudyConfig, level: int, quad, man):
    spec = cfg.stab_spec
    vol_rule, face_rule = _rules(space, cfg)
    try:
        flux = source_iteration(man.problem, quad, space, cfg.si_tol, cfg.si_maxiter, spec, cfg.solver, vol_rule, face_rule)
    except TransportError as exc:
        raise StudyError(f"level {level}: {exc}") from exc
    counts, qs = [], []
    for om in quad.directions:
        beta = constant_velocity(om[:2])
        ids = [c.face_id for c in detect_reentrant_faces(space.mesh, beta) if c.reentrant]
        counts.append(len(ids))
        qs.append(reentrant_quadrature_error(space, beta, spec, face_rule, faces=ids).total if ids else 0.0)
    b0 = mean_stabilization(space, quad, spec, face_rule)
    l2 = l2_error(space, flux.phi, man.phi)
    dg = dg_norm_error(space, flux.phi, man.phi, None, spec, face_rule, b0=b0)
    info = {
        "reentrant_faces_per_direction": counts,
        "source_iterations": flux.iterations,
        "source_changes": flux.changes,
        "contraction": flux.contraction,
        "solver_iterations": flux.solver_iterations,
    }
    rec = ErrorRecord(level, space.mesh.h_max, space.ndofs, float(np.mean(counts)), float(np.mean(qs)), l2, dg)
    return rec, info


def run_convergence_study(cfg: StudyConfig) -> StudyResult:
    """Run every level and write the CSV / JSON summary named in ``cfg``."""
    cfg.validate()
    t_start = time.perf_counter()
    result = StudyResult(ConvergenceTable(), config=cfg)
    quad = man = None
    if cfg.problem == "transport":
        quad = build_angular_quadrature(cfg.n_polar, cfg.n_azimuthal)
        man = manufactured_sn(quad)
    for level, mesh in enumerate(mesh_levels(cfg)):
        t0 = time.perf_counter()
        space = DGSpace(mesh, cfg.degree)
        if cfg.problem == "advection":
            rec, info = _advection_level(space, cfg, level)
        else:
            rec, info = _transport_level(space, cfg, level, quad, man)
        result.table.append(rec)
        info.update(level=level, dofs=space.ndofs, elements=mesh.n_elements, wall_time=time.perf_counter() - t0)
        result.levels.append(info)
        logger.info("level %d: %d dofs, L2 %.3e, DG %.3e, Q %.3e", level, rec.dofs, rec.l2_error, rec.dg_error, rec.Q)
    result.wall_time = time.perf_counter() - t_start
    if cfg.output:
        result.table.write_csv(cfg.output, cfg.precision)
    if cfg.summary:
        Path(cfg.summary).write_text(json.dumps(result.summary(), indent=2) + "\n")
    return result
