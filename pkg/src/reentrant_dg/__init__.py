"""High-order DG for advection-reaction and discrete-ordinates transport on curved meshes
with reentrant faces, where the sign of beta . n changes along a face."""

from .basis import BasisSet, QuadratureRule, gauss_legendre, tensor_rule
from .dg import (
    DGSpace,
    StabilizationSpec,
    assemble_system,
    constant_velocity,
    detect_reentrant_faces,
    rotating_velocity,
)
from .diagnostics import ConvergenceTable, dg_norm_error, l2_error, reentrant_quadrature_error
from .mesh import Mesh, MeshError, apply_curving_map, build_cartesian_mesh, refine_uniform
from .solver import SolverConfig, gmres_restarted, solve
from .study import StudyConfig, parse_config, run_convergence_study
from .transport import build_angular_quadrature, manufactured_sn, source_iteration

__version__ = "0.1.0"
