"""Hybridized discontinuous Galerkin solvers for the Stokes equations on triangles.

Three variants share one code path: HDG (discontinuous facet velocity and
pressure), EDG_HDG (continuous facet velocity) and EDG (continuous facet
velocity and pressure).
"""
from .mesh import Mesh, generate_l_shape, generate_rectangle, load_gmsh, uniform_refine
from .spaces import DofMap, MethodVariant, build_dofmap
from .assembly import BlockSystem, assemble_global, penalty_parameter
from .condense import CondensedSystem, back_substitute, condense
from .krylov import BlockSGSPreconditioner, SolveReport, gmres_restarted, minres
from .solutions import ErrorReport, error_norms
from .solver import DiscreteSolution, solve_stokes

__version__ = "0.1.0"

__all__ = [
    "Mesh", "generate_rectangle", "generate_l_shape", "uniform_refine", "load_gmsh",
    "MethodVariant", "DofMap", "build_dofmap",
    "BlockSystem", "assemble_global", "penalty_parameter",
    "CondensedSystem", "condense", "back_substitute",
    "BlockSGSPreconditioner", "SolveReport", "minres", "gmres_restarted",
    "ErrorReport", "error_norms",
    "DiscreteSolution", "solve_stokes",
]
