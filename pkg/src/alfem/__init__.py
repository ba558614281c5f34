"""Adaptive local (AL) basis finite elements for rough diffusion coefficients.

Modules:

* ``mesh``: structured triangulations, red refinement, patch layers
* ``coefficient``: piecewise constant diffusion tensors
* ``fem``: P1 assembly, sparse SPD solves, norms and transfers
* ``albasis``: nearfield and compressed farfield local basis functions
* ``galerkin``: the global AL system and its solution
* ``regularity``: Meyers-type exponent diagnostics
* ``harness``: convergence studies against a fine reference solution
"""
from .albasis import ALBasisSet, ALParameters, FineHierarchy, build_al_basis, select_parameters
from .coefficient import Coefficient, make_checkerboard, make_random_lognormal_like
from .galerkin import assemble_al_system, dimension_report, solve_al
from .harness import ConvergenceReport, RunConfig, run_convergence
from .mesh import TriMesh, build_structured_mesh, compute_patch, refine_red
from .regularity import RegularityContext, eta, meyers_constant, p_star

__all__ = [
    "ALBasisSet",
    "ALParameters",
    "Coefficient",
    "ConvergenceReport",
    "FineHierarchy",
    "RegularityContext",
    "RunConfig",
    "TriMesh",
    "assemble_al_system",
    "build_al_basis",
    "build_structured_mesh",
    "compute_patch",
    "dimension_report",
    "eta",
    "make_checkerboard",
    "make_random_lognormal_like",
    "meyers_constant",
    "p_star",
    "refine_red",
    "run_convergence",
    "select_parameters",
    "solve_al",
]
