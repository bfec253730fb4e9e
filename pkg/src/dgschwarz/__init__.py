"""Two-level additive and hybrid Schwarz preconditioners for hp-version SIPG discretizations."""

from .coarse import CoarseSpace, build_coarse_space
from .dgspace import DgSpace, build_dof_layout, eval_basis, quadrature
from .krylov import SolveReport, estimate_condition, pcg_solve, stationary_solve
from .mesh import Mesh, build_face_topology, build_uniform_square_mesh, load_mesh, save_mesh
from .partition import Partition, build_partition
from .schwarz import SchwarzPreconditioner, build_preconditioner
from .sipg import AssemblyConfig, DiffusionField, assemble_system, build_benchmark_problem

__version__ = "0.1.0"

__all__ = [
    "AssemblyConfig",
    "CoarseSpace",
    "DgSpace",
    "DiffusionField",
    "Mesh",
    "Partition",
    "SchwarzPreconditioner",
    "SolveReport",
    "assemble_system",
    "build_benchmark_problem",
    "build_coarse_space",
    "build_dof_layout",
    "build_face_topology",
    "build_partition",
    "build_preconditioner",
    "build_uniform_square_mesh",
    "estimate_condition",
    "eval_basis",
    "load_mesh",
    "pcg_solve",
    "quadrature",
    "save_mesh",
    "stationary_solve",
]
