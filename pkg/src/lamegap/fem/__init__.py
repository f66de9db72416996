from .element import ElasticityTensor
from .mesh import GapMesh, MeshError, MeshParams, build_annulus_mesh, build_gap_mesh
from .elasticity import (FieldSolution, LameSolver, PointLocator, SolverError, assemble_stiffness,
                         boundary_flux_functional, element_gradients, energy_inner, gradient_at, gradients_at,
                         scalar_laplace_selftest, solve_subproblem, strain_l2)
from .constrained import solve_constrained

__all__ = [
    "ElasticityTensor", "GapMesh", "MeshError", "MeshParams", "build_annulus_mesh", "build_gap_mesh",
    "FieldSolution", "LameSolver", "PointLocator", "SolverError", "assemble_stiffness",
    "boundary_flux_functional", "element_gradients", "energy_inner", "gradient_at", "gradients_at",
    "scalar_laplace_selftest", "solve_subproblem", "strain_l2", "solve_constrained",
]
